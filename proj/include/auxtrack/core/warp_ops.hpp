#pragma once

#include "auxtrack/core/nn_ops.hpp"
#include "auxtrack/geometry.hpp"

namespace auxtrack::ad {

// Discrete sampling decisions per output pixel: tap cell (x0, y0) and whether
// each axis was border-clamped, as an (oh, ow, 4) tensor. The finite-difference
// harness captures these once and replays them so every probe stays on the
// same smooth piece of the sampler.
template <typename T>
Tensor<T> bilinear_cells(const Tensor<T>& coords, int img_h, int img_w) {
  const int oh = coords.dim(0), ow = coords.dim(1);
  Tensor<T> cells({oh, ow, 4});
  for (int v = 0; v < oh; ++v)
    for (int u = 0; u < ow; ++u) {
      T xo = coords.at(v, u, 0);
      T yo = coords.at(v, u, 1);
      T x = std::clamp(xo, T(0), static_cast<T>(img_w - 1));
      T y = std::clamp(yo, T(0), static_cast<T>(img_h - 1));
      cells.at(v, u, 0) = static_cast<T>(static_cast<int>(std::floor(x)));
      cells.at(v, u, 1) = static_cast<T>(static_cast<int>(std::floor(y)));
      cells.at(v, u, 2) = x == xo ? T(0) : T(1);
      cells.at(v, u, 3) = y == yo ? T(0) : T(1);
    }
  return cells;
}

// Differentiable bilinear sampling with border clamp. Gradients flow to both
// the image and the sampling coordinates; a clamped coordinate contributes no
// coordinate gradient. With frozen_cells the tap choice is pinned and the
// sampler evaluates the linear extension of that piece; live and frozen
// evaluation agree bitwise at the capture point.
template <typename T>
Var<T> grid_sample_var(Var<T> img, Var<T> coords,
                       const Tensor<T>* frozen_cells = nullptr) {
  const int h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
  const int oh = coords.shape()[0], ow = coords.shape()[1];
  Tensor<T> cells =
      frozen_cells ? *frozen_cells : bilinear_cells(coords.value(), h, w);
  if (cells.shape() != std::vector<int>{oh, ow, 4})
    throw std::invalid_argument("grid_sample_var: cell shape mismatch");

  const Tensor<T>& iv0 = img.value();
  const Tensor<T>& cv0 = coords.value();
  Tensor<T> out({oh, ow, c}, iv0.role());
  for (int v = 0; v < oh; ++v) {
    for (int u = 0; u < ow; ++u) {
      T x = cv0.at(v, u, 0);
      T y = cv0.at(v, u, 1);
      if (!std::isfinite(static_cast<double>(x)) ||
          !std::isfinite(static_cast<double>(y)))
        throw std::invalid_argument("grid_sample_var: non-finite coordinate");
      // Clamp only where the captured piece clamped; an unclamped axis stays
      // raw so replayed probes see the linear extension, not a new piece.
      if (cells.at(v, u, 2) != T(0)) x = std::clamp(x, T(0), static_cast<T>(w - 1));
      if (cells.at(v, u, 3) != T(0)) y = std::clamp(y, T(0), static_cast<T>(h - 1));
      const int x0 = static_cast<int>(cells.at(v, u, 0));
      const int y0 = static_cast<int>(cells.at(v, u, 1));
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const T fx = x - static_cast<T>(x0);
      const T fy = y - static_cast<T>(y0);
      for (int ch = 0; ch < c; ++ch) {
        const T v00 = iv0.at(y0, x0, ch), v01 = iv0.at(y0, x1, ch);
        const T v10 = iv0.at(y1, x0, ch), v11 = iv0.at(y1, x1, ch);
        const T top = v00 + fx * (v01 - v00);
        const T bot = v10 + fx * (v11 - v10);
        out.at(v, u, ch) = top + fy * (bot - top);
      }
    }
  }

  int id = img.g->add_node(
      std::move(out), {img.id, coords.id},
      [img, coords, cells, h, w, c, oh, ow](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        const Tensor<T>& iv = g.value(img.id);
        const Tensor<T>& cv = g.value(coords.id);
        const bool need_img = g.node(img.id).needs_grad;
        const bool need_crd = g.node(coords.id).needs_grad;
        Tensor<T>* gi = need_img ? &g.ensure_grad(img.id) : nullptr;
        Tensor<T>* gc = need_crd ? &g.ensure_grad(coords.id) : nullptr;
        for (int v = 0; v < oh; ++v) {
          for (int u = 0; u < ow; ++u) {
            T x = cv.at(v, u, 0);
            T y = cv.at(v, u, 1);
            const bool cx = cells.at(v, u, 2) != T(0);
            const bool cy = cells.at(v, u, 3) != T(0);
            if (cx) x = std::clamp(x, T(0), static_cast<T>(w - 1));
            if (cy) y = std::clamp(y, T(0), static_cast<T>(h - 1));
            const int x0 = static_cast<int>(cells.at(v, u, 0));
            const int y0 = static_cast<int>(cells.at(v, u, 1));
            const int x1 = std::min(x0 + 1, w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const T fx = x - static_cast<T>(x0);
            const T fy = y - static_cast<T>(y0);
            T gx_acc = T(0), gy_acc = T(0);
            for (int ch = 0; ch < c; ++ch) {
              const T gout = go.at(v, u, ch);
              if (gout == T(0)) continue;
              const T v00 = iv.at(y0, x0, ch), v01 = iv.at(y0, x1, ch);
              const T v10 = iv.at(y1, x0, ch), v11 = iv.at(y1, x1, ch);
              if (need_img) {
                gi->at(y0, x0, ch) += gout * (T(1) - fx) * (T(1) - fy);
                gi->at(y0, x1, ch) += gout * fx * (T(1) - fy);
                gi->at(y1, x0, ch) += gout * (T(1) - fx) * fy;
                gi->at(y1, x1, ch) += gout * fx * fy;
              }
              if (need_crd) {
                gx_acc += gout * ((v01 - v00) * (T(1) - fy) + (v11 - v10) * fy);
                gy_acc += gout * ((v10 - v00) * (T(1) - fx) + (v11 - v01) * fx);
              }
            }
            if (need_crd) {
              if (!cx) gc->at(v, u, 0) += gx_acc;
              if (!cy) gc->at(v, u, 1) += gy_acc;
            }
          }
        }
      });
  return {img.g, id};
}

template <typename T>
struct WarpCoords {
  Var<T> coords;    // HxWx2
  Tensor<T> valid;  // HxW constant mask, not part of the tape
};

namespace detail {

// d(exp(r))/dr_i. Exact formula away from zero, first-order limit at zero.
inline std::array<Eigen::Matrix3d, 3> rotation_jacobians(const Eigen::Vector3d& r,
                                                         const Eigen::Matrix3d& R) {
  std::array<Eigen::Matrix3d, 3> J;
  const double n2 = r.squaredNorm();
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector3d e = Eigen::Vector3d::Zero();
    e[i] = 1.0;
    if (n2 < 1e-14) {
      J[i] = auxtrack::detail::skew(e);
    } else {
      Eigen::Vector3d v = r.cross((Eigen::Matrix3d::Identity() - R) * e);
      J[i] = (r[i] * auxtrack::detail::skew(r) + auxtrack::detail::skew(v)) / n2 * R;
    }
  }
  return J;
}

}  // namespace detail

// Projects every target pixel into the source view given depth and a 6-vector
// pose (axis-angle ++ translation). Forward matches auxtrack::warp_coords,
// including the exact identity shortcut; the backward pass always uses the
// analytic Jacobians.
template <typename T>
WarpCoords<T> warp_coords_var(Var<T> depth, Var<T> pose,
                              const Intrinsics& k) {
  if (pose.value().size() != 6)
    throw std::invalid_argument("warp_coords_var: pose must have 6 elements");
  const int h = depth.shape()[0], w = depth.shape()[1];

  Pose6DoF p;
  p.rotation << pose.value()[0], pose.value()[1], pose.value()[2];
  p.translation << pose.value()[3], pose.value()[4], pose.value()[5];
  auto [coords, valid] = auxtrack::warp_coords(depth.value(), p, k);

  const Eigen::Matrix3d R = rotation_from_axis_angle(p.rotation);
  const Eigen::Vector3d t = p.translation;

  int id = depth.g->add_node(
      std::move(coords), {depth.id, pose.id},
      [depth, pose, k, h, w, R, t](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        const Tensor<T>& dv = g.value(depth.id);
        const bool need_d = g.node(depth.id).needs_grad;
        const bool need_p = g.node(pose.id).needs_grad;
        Tensor<T>* gd = need_d ? &g.ensure_grad(depth.id) : nullptr;

        Eigen::Vector3d r_axis(static_cast<double>(g.value(pose.id)[0]),
                               static_cast<double>(g.value(pose.id)[1]),
                               static_cast<double>(g.value(pose.id)[2]));
        const auto Jr = detail::rotation_jacobians(r_axis, R);

        const double f = k.focal;
        double gpose[6] = {0, 0, 0, 0, 0, 0};
        for (int v = 0; v < h; ++v) {
          const double ry = (v - k.cy) / f;
          for (int u = 0; u < w; ++u) {
            const double gu = static_cast<double>(go.at(v, u, 0));
            const double gvv = static_cast<double>(go.at(v, u, 1));
            if (gu == 0.0 && gvv == 0.0) continue;
            const double rx = (u - k.cx) / f;
            const double d = static_cast<double>(dv.at(v, u));
            const Eigen::Vector3d P(rx * d, ry * d, d);
            const Eigen::Vector3d Q = R * P + t;
            const double zc = std::max(Q.z(), kZMin);
            const double inv_z = 1.0 / zc;
            Eigen::Vector3d gQ;
            gQ.x() = gu * f * inv_z;
            gQ.y() = gvv * f * inv_z;
            gQ.z() = Q.z() > kZMin
                         ? -(gu * Q.x() + gvv * Q.y()) * f * inv_z * inv_z
                         : 0.0;
            if (need_d) {
              const Eigen::Vector3d dir(rx, ry, 1.0);
              gd->at(v, u) += static_cast<T>(gQ.dot(R * dir));
            }
            if (need_p) {
              for (int i = 0; i < 3; ++i) gpose[i] += gQ.dot(Jr[i] * P);
              gpose[3] += gQ.x();
              gpose[4] += gQ.y();
              gpose[5] += gQ.z();
            }
          }
        }
        if (need_p) {
          Tensor<T>& gp = g.ensure_grad(pose.id);
          for (int i = 0; i < 6; ++i) gp[i] += static_cast<T>(gpose[i]);
        }
      });
  return {{depth.g, id}, std::move(valid)};
}

// 3x3 box filtering restricted to a constant validity mask. Output at p is
// the mask-weighted window mean; pixels with an empty window produce 0.
// Linear in x for fixed mask, so the adjoint reuses the same weights.
template <typename T>
Var<T> box3_masked(Var<T> x, const Tensor<T>& mask) {
  if (x.shape().size() != 3) throw std::invalid_argument("box3_masked: x must be HxWxC");
  const int h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  if (mask.shape() != std::vector<int>{h, w})
    throw std::invalid_argument("box3_masked: mask shape mismatch");

  Tensor<T> inv_count({h, w});
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      T cnt = T(0);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int yy = v + dy, xx = u + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          cnt += mask.at(yy, xx);
        }
      inv_count.at(v, u) = cnt > T(0) ? T(1) / cnt : T(0);
    }
  }

  Tensor<T> out({h, w, c});
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      for (int ch = 0; ch < c; ++ch) {
        T acc = T(0);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = v + dy, xx = u + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            acc += mask.at(yy, xx) * x.value().at(yy, xx, ch);
          }
        out.at(v, u, ch) = acc * inv_count.at(v, u);
      }
    }
  }

  Tensor<T> mc = mask;
  int id = x.g->add_node(
      std::move(out), {x.id},
      [x, h, w, c, mc = std::move(mc),
       inv_count = std::move(inv_count)](Graph<T>& g, int self) {
        const Tensor<T>& go = g.grad(self);
        Tensor<T>& gx = g.ensure_grad(x.id);
        for (int v = 0; v < h; ++v) {
          for (int u = 0; u < w; ++u) {
            const T ic = inv_count.at(v, u);
            if (ic == T(0)) continue;
            for (int ch = 0; ch < c; ++ch) {
              const T gout = go.at(v, u, ch) * ic;
              if (gout == T(0)) continue;
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                  int yy = v + dy, xx = u + dx;
                  if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                  if (mc.at(yy, xx) == T(0)) continue;
                  gx.at(yy, xx, ch) += gout * mc.at(yy, xx);
                }
            }
          }
        }
      });
  return {x.g, id};
}

}  // namespace auxtrack::ad

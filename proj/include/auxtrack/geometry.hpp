#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "auxtrack/core/tensor.hpp"

namespace auxtrack {

// Projection validity floor and the global metric depth range. Depth maps
// produced by the network are always inside [kMinDepth, kMaxDepth].
inline constexpr double kZMin = 1e-3;
inline constexpr double kMinDepth = 0.1;
inline constexpr double kMaxDepth = 100.0;

// Maps a sigmoid output in (0,1) to metric depth in [kMinDepth, kMaxDepth]:
// D = 1 / (a*sigma + b) with 1/(a+b) = kMinDepth and 1/b = kMaxDepth.
inline constexpr double kDispA = 1.0 / kMinDepth - 1.0 / kMaxDepth;  // 9.99
inline constexpr double kDispB = 1.0 / kMaxDepth;                    // 0.01

template <typename T>
T disparity_to_depth(T sigma) {
  if (!(sigma >= T(0) && sigma <= T(1)))
    throw std::invalid_argument("disparity_to_depth: sigma outside [0,1]");
  return T(1) / (static_cast<T>(kDispA) * sigma + static_cast<T>(kDispB));
}

template <typename T>
T depth_to_disparity(T depth) {
  if (!(depth > T(0))) throw std::invalid_argument("depth_to_disparity: depth <= 0");
  return (T(1) / depth - static_cast<T>(kDispB)) / static_cast<T>(kDispA);
}

struct Intrinsics {
  double focal = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  void validate() const {
    if (!(focal > 0.0)) throw std::invalid_argument("Intrinsics: focal must be > 0");
    if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
      throw std::invalid_argument("Intrinsics: principal point outside image");
  }

  // The paper-style pseudo camera for a crop: f = width/2, centered.
  static Intrinsics pseudo(int width, int height) {
    Intrinsics k;
    k.focal = 0.5 * width;
    k.cx = 0.5 * width;
    k.cy = 0.5 * height;
    k.width = width;
    k.height = height;
    return k;
  }
};

struct Pose6DoF {
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();     // axis-angle, radians
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();  // scene units

  bool is_identity() const {
    return rotation.isZero(0.0) && translation.isZero(0.0);
  }

  bool finite() const {
    return rotation.allFinite() && translation.allFinite();
  }

  // Wraps the rotation angle into (-pi, pi].
  Pose6DoF canonicalized() const {
    Pose6DoF out = *this;
    double theta = rotation.norm();
    if (theta <= M_PI || theta == 0.0) return out;
    double wrapped = std::fmod(theta, 2.0 * M_PI);
    if (wrapped > M_PI) wrapped -= 2.0 * M_PI;
    out.rotation = rotation / theta * wrapped;
    return out;
  }
};

namespace detail {

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

}  // namespace detail

// Axis-angle exponential map. Small angles use the second-order Taylor
// expansion so the map stays smooth through zero.
inline Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& r) {
  double theta = r.norm();
  Eigen::Matrix3d K = detail::skew(r);
  if (theta < 1e-8)
    return Eigen::Matrix3d::Identity() + K + 0.5 * K * K;
  double a = std::sin(theta) / theta;
  double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Eigen::Matrix3d::Identity() + a * K + b * K * K;
}

inline Eigen::Matrix4d pose_to_matrix(const Pose6DoF& p) {
  if (!p.finite()) throw std::invalid_argument("pose_to_matrix: non-finite pose");
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_from_axis_angle(p.rotation);
  m.topRightCorner<3, 1>() = p.translation;
  return m;
}

inline Pose6DoF pose_inverse(const Pose6DoF& p) {
  Eigen::Matrix3d r = rotation_from_axis_angle(p.rotation);
  Pose6DoF inv;
  inv.rotation = -p.rotation;
  inv.translation = -(r.transpose() * p.translation);
  return inv;
}

// Log map, the inverse of rotation_from_axis_angle. Angles at or beyond
// pi - 1e-3 are outside the motion envelope here and recovered via the
// symmetric part, which loses the axis sign resolution gracefully.
inline Eigen::Vector3d axis_angle_from_rotation(const Eigen::Matrix3d& R) {
  Eigen::Vector3d vee(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  double c = std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0);
  double theta = std::acos(c);
  if (theta < 1e-7) return 0.5 * vee;
  if (theta < M_PI - 1e-3) return (theta / (2.0 * std::sin(theta))) * vee;
  Eigen::Vector3d axis;
  for (int i = 0; i < 3; ++i)
    axis[i] = std::sqrt(std::max((R(i, i) - c) / (1.0 - c), 0.0));
  if (vee.x() < 0) axis.x() = -axis.x();
  if (vee.y() < 0) axis.y() = -axis.y();
  if (vee.z() < 0) axis.z() = -axis.z();
  return theta * axis.normalized();
}

// Composition: (a ∘ b)(x) = a(b(x)).
inline Pose6DoF pose_compose(const Pose6DoF& a, const Pose6DoF& b) {
  Eigen::Matrix3d ra = rotation_from_axis_angle(a.rotation);
  Eigen::Matrix3d rb = rotation_from_axis_angle(b.rotation);
  Pose6DoF out;
  out.rotation = axis_angle_from_rotation(ra * rb);
  out.translation = ra * b.translation + a.translation;
  return out;
}

// point(u,v) = D(u,v) * ((u-cx)/f, (v-cy)/f, 1)
template <typename T>
Tensor<T> backproject(const Tensor<T>& depth, const Intrinsics& k) {
  if (depth.rank() != 2)
    throw std::invalid_argument("backproject: depth must be HxW");
  const int h = depth.dim(0), w = depth.dim(1);
  for (std::size_t i = 0; i < depth.size(); ++i)
    if (!(depth[i] > T(0)))
      throw std::invalid_argument("backproject: depth must be positive");
  Tensor<T> pts({h, w, 3});
  const T f = static_cast<T>(k.focal);
  const T cx = static_cast<T>(k.cx), cy = static_cast<T>(k.cy);
  for (int v = 0; v < h; ++v) {
    const T ry = (static_cast<T>(v) - cy) / f;
    for (int u = 0; u < w; ++u) {
      const T rx = (static_cast<T>(u) - cx) / f;
      const T d = depth.at(v, u);
      pts.at(v, u, 0) = rx * d;
      pts.at(v, u, 1) = ry * d;
      pts.at(v, u, 2) = d;
    }
  }
  return pts;
}

template <typename T>
Tensor<T> transform_points(const Tensor<T>& pts, const Eigen::Matrix4d& m) {
  if (pts.rank() != 3 || pts.dim(2) != 3)
    throw std::invalid_argument("transform_points: points must be HxWx3");
  Tensor<T> out(pts.shape());
  const int h = pts.dim(0), w = pts.dim(1);
  Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  Eigen::Vector3d t = m.topRightCorner<3, 1>();
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      Eigen::Vector3d p(pts.at(v, u, 0), pts.at(v, u, 1), pts.at(v, u, 2));
      Eigen::Vector3d q = r * p + t;
      out.at(v, u, 0) = static_cast<T>(q.x());
      out.at(v, u, 1) = static_cast<T>(q.y());
      out.at(v, u, 2) = static_cast<T>(q.z());
    }
  }
  return out;
}

// (u,v) = (f*X/Z + cx, f*Y/Z + cy). Z is clamped below kZMin for the division;
// such pixels (and coords landing outside the frame) are marked invalid.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> project(const Tensor<T>& pts, const Intrinsics& k) {
  if (pts.rank() != 3 || pts.dim(2) != 3)
    throw std::invalid_argument("project: points must be HxWx3");
  const int h = pts.dim(0), w = pts.dim(1);
  Tensor<T> coords({h, w, 2}, TensorRole::Coords);
  Tensor<T> valid({h, w}, TensorRole::Mask);
  const T f = static_cast<T>(k.focal);
  const T cx = static_cast<T>(k.cx), cy = static_cast<T>(k.cy);
  const T zmin = static_cast<T>(kZMin);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const T z = pts.at(v, u, 2);
      const T zc = std::max(z, zmin);
      const T px = f * pts.at(v, u, 0) / zc + cx;
      const T py = f * pts.at(v, u, 1) / zc + cy;
      coords.at(v, u, 0) = px;
      coords.at(v, u, 1) = py;
      bool ok = z > zmin && px >= T(0) && px <= T(k.width - 1) && py >= T(0) &&
                py <= T(k.height - 1);
      valid.at(v, u) = ok ? T(1) : T(0);
    }
  }
  return {std::move(coords), std::move(valid)};
}

// Bilinear sampling with border clamp. Exact at integer coordinates.
template <typename T>
Tensor<T> grid_sample(const Tensor<T>& img, const Tensor<T>& coords) {
  if (img.rank() != 3) throw std::invalid_argument("grid_sample: image must be HxWxC");
  if (coords.rank() != 3 || coords.dim(2) != 2)
    throw std::invalid_argument("grid_sample: coords must be HxWx2");
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  const int oh = coords.dim(0), ow = coords.dim(1);
  Tensor<T> out({oh, ow, c}, img.role());
  for (int v = 0; v < oh; ++v) {
    for (int u = 0; u < ow; ++u) {
      T x = coords.at(v, u, 0);
      T y = coords.at(v, u, 1);
      if (!std::isfinite(static_cast<double>(x)) ||
          !std::isfinite(static_cast<double>(y)))
        throw std::invalid_argument("grid_sample: non-finite coordinate");
      x = std::clamp(x, T(0), static_cast<T>(w - 1));
      y = std::clamp(y, T(0), static_cast<T>(h - 1));
      const int x0 = static_cast<int>(std::floor(x));
      const int y0 = static_cast<int>(std::floor(y));
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const T fx = x - static_cast<T>(x0);
      const T fy = y - static_cast<T>(y0);
      for (int ch = 0; ch < c; ++ch) {
        const T v00 = img.at(y0, x0, ch), v01 = img.at(y0, x1, ch);
        const T v10 = img.at(y1, x0, ch), v11 = img.at(y1, x1, ch);
        const T top = v00 + fx * (v01 - v00);
        const T bot = v10 + fx * (v11 - v10);
        out.at(v, u, ch) = top + fy * (bot - top);
      }
    }
  }
  return out;
}

// Warp coordinates for reconstructing the target view from a source view:
// project(transform(backproject(D, K), T), K). The identity pose maps to the
// identity pixel grid exactly, not merely to within round-off.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> warp_coords(const Tensor<T>& depth,
                                            const Pose6DoF& pose,
                                            const Intrinsics& k) {
  const int h = depth.dim(0), w = depth.dim(1);
  if (pose.is_identity()) {
    Tensor<T> coords({h, w, 2}, TensorRole::Coords);
    Tensor<T> valid({h, w}, TensorRole::Mask);
    const T zmin = static_cast<T>(kZMin);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        coords.at(v, u, 0) = static_cast<T>(u);
        coords.at(v, u, 1) = static_cast<T>(v);
        valid.at(v, u) = depth.at(v, u) > zmin ? T(1) : T(0);
      }
    }
    return {std::move(coords), std::move(valid)};
  }
  return project(transform_points(backproject(depth, k), pose_to_matrix(pose)), k);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> reconstruct(const Tensor<T>& src_img,
                                            const Tensor<T>& depth,
                                            const Pose6DoF& pose,
                                            const Intrinsics& k) {
  auto [coords, valid] = warp_coords(depth, pose, k);
  Tensor<T> warped = grid_sample(src_img, coords);
  return {std::move(warped), std::move(valid)};
}

}  // namespace auxtrack

#pragma once

#include <vector>

#include "auxtrack/box.hpp"
#include "auxtrack/core/warp_ops.hpp"
#include "auxtrack/geometry.hpp"
#include "auxtrack/strategy.hpp"

namespace auxtrack {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct LossWeights {
  double alpha = 0.4;          // auxiliary blend
  double beta = 0.85;          // SSIM share of the photometric error
  double lambda_smooth = 1e-3;
  double lambda_giou = 2.0;
  double lambda_l1 = 5.0;

  // Masked means divide by contributing-pixel count by default; "all"
  // divides by H*W instead.
  enum class Norm { contributing, all };
  Norm norm = Norm::contributing;

  void validate() const {
    if (alpha < 0 || alpha > 1) throw std::invalid_argument("alpha outside [0,1]");
    if (beta < 0 || beta > 1) throw std::invalid_argument("beta outside [0,1]");
    if (lambda_smooth < 0 || lambda_giou < 0 || lambda_l1 < 0)
      throw std::invalid_argument("negative loss weight");
  }
};

struct LossReport {
  double total = 0;
  double tracking = 0;
  double depth_aux = 0;
  std::vector<double> per_scale;
  double mask_coverage = 0;
};

namespace detail {

inline int reflect_idx(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

// 3x3 mean with reflection padding, one channel of an HxWxC tensor.
template <typename T>
void box3_reflect(const Tensor<T>& x, int ch, Tensor<T>& out) {
  const int h = x.dim(0), w = x.dim(1);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      T acc = T(0);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          acc += x.at(reflect_idx(v + dy, h), reflect_idx(u + dx, w), ch);
      out.at(v, u) = acc / T(9);
    }
  }
}

}  // namespace detail

// Windowed SSIM with 3x3 mean pooling and reflection padding, averaged over
// channels. Returns an HxW map in [-1, 1]; ssim(I, I) is exactly 1.
template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  if (a.rank() != 3) throw std::invalid_argument("ssim: inputs must be HxWxC");
  const int h = a.dim(0), w = a.dim(1), c = a.dim(2);
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  Tensor<T> out({h, w});
  Tensor<T> mu_a({h, w}), mu_b({h, w}), e_aa({h, w}), e_bb({h, w}), e_ab({h, w});
  Tensor<T> aa({h, w, 1}), bb({h, w, 1}), ab({h, w, 1});
  for (int ch = 0; ch < c; ++ch) {
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        T av = a.at(v, u, ch), bv = b.at(v, u, ch);
        aa.at(v, u, 0) = av * av;
        bb.at(v, u, 0) = bv * bv;
        ab.at(v, u, 0) = av * bv;
      }
    detail::box3_reflect(a, ch, mu_a);
    detail::box3_reflect(b, ch, mu_b);
    detail::box3_reflect(aa, 0, e_aa);
    detail::box3_reflect(bb, 0, e_bb);
    detail::box3_reflect(ab, 0, e_ab);
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        T ma = mu_a.at(v, u), mb = mu_b.at(v, u);
        T va = e_aa.at(v, u) - ma * ma;
        T vb = e_bb.at(v, u) - mb * mb;
        T cov = e_ab.at(v, u) - ma * mb;
        T num = (T(2) * ma * mb + c1) * (T(2) * cov + c2);
        T den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        out.at(v, u) += num / den;
      }
  }
  if (c > 1)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= static_cast<T>(c);
  return out;
}

// pe = beta*(1-ssim)/2 + (1-beta)*mean_channels|a-b|, an HxW map.
template <typename T>
Tensor<T> photometric_error(const Tensor<T>& a, const Tensor<T>& b, double beta) {
  if (!a.same_shape(b))
    throw std::invalid_argument("photometric_error: shape mismatch");
  Tensor<T> s = ssim(a, b);
  const int h = a.dim(0), w = a.dim(1), c = a.dim(2);
  Tensor<T> out({h, w});
  const T bw = static_cast<T>(beta), lw = static_cast<T>(1.0 - beta);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      T l1 = T(0);
      for (int ch = 0; ch < c; ++ch)
        l1 += std::abs(a.at(v, u, ch) - b.at(v, u, ch));
      l1 /= static_cast<T>(c);
      out.at(v, u) = bw * (T(1) - s.at(v, u)) / T(2) + lw * l1;
    }
  return out;
}

template <typename T>
Tensor<T> min_reprojection(const Tensor<T>& pe_prev, const Tensor<T>& pe_next) {
  if (!pe_prev.same_shape(pe_next))
    throw std::invalid_argument("min_reprojection: shape mismatch");
  Tensor<T> out = pe_prev;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(out[i], pe_next[i]);
  return out;
}

// m_s(px) = [ min_t' pe(I_t, warped_t') < min_t' pe(I_t, I_t') ], strict.
// Ties mask out, which makes a static pair (sources equal to the target,
// identity warps) produce an all-zero mask.
template <typename T>
Tensor<T> stationary_mask(const Tensor<T>& target,
                          const std::vector<Tensor<T>>& warped,
                          const std::vector<Tensor<T>>& sources, double beta) {
  if (warped.empty() || warped.size() != sources.size())
    throw std::invalid_argument("stationary_mask: source count mismatch");
  Tensor<T> best_w = photometric_error(target, warped[0], beta);
  for (std::size_t i = 1; i < warped.size(); ++i)
    best_w = min_reprojection(best_w, photometric_error(target, warped[i], beta));
  Tensor<T> best_id = photometric_error(target, sources[0], beta);
  for (std::size_t i = 1; i < sources.size(); ++i)
    best_id = min_reprojection(best_id, photometric_error(target, sources[i], beta));
  Tensor<T> out(best_w.shape(), TensorRole::Mask);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = best_w[i] < best_id[i] ? T(1) : T(0);
  return out;
}

// Edge-aware first-order smoothness on mean-normalized disparity:
// mean |dx d*| e^{-|dx I|} + mean |dy d*| e^{-|dy I|}, forward differences.
template <typename T>
T smoothness_loss(const Tensor<T>& disp, const Tensor<T>& img) {
  if (disp.rank() != 2) throw std::invalid_argument("smoothness_loss: disp must be HxW");
  const int h = disp.dim(0), w = disp.dim(1), c = img.dim(2);
  if (img.dim(0) != h || img.dim(1) != w)
    throw std::invalid_argument("smoothness_loss: image shape mismatch");
  if (h < 2 || w < 2)
    throw std::invalid_argument("smoothness_loss: needs at least 2x2");
  T mean = T(0);
  for (std::size_t i = 0; i < disp.size(); ++i) {
    if (!(disp[i] > T(0)))
      throw std::invalid_argument("smoothness_loss: disparity must be positive");
    mean += disp[i];
  }
  mean /= static_cast<T>(disp.size());

  T tx = T(0);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u + 1 < w; ++u) {
      T dd = std::abs(disp.at(v, u + 1) - disp.at(v, u)) / mean;
      T gi = T(0);
      for (int ch = 0; ch < c; ++ch)
        gi += std::abs(img.at(v, u + 1, ch) - img.at(v, u, ch));
      tx += dd * std::exp(-gi / static_cast<T>(c));
    }
  tx /= static_cast<T>(h * (w - 1));

  T ty = T(0);
  for (int v = 0; v + 1 < h; ++v)
    for (int u = 0; u < w; ++u) {
      T dd = std::abs(disp.at(v + 1, u) - disp.at(v, u)) / mean;
      T gi = T(0);
      for (int ch = 0; ch < c; ++ch)
        gi += std::abs(img.at(v + 1, u, ch) - img.at(v, u, ch));
      ty += dd * std::exp(-gi / static_cast<T>(c));
    }
  ty /= static_cast<T>((h - 1) * w);
  return tx + ty;
}

// L1 over unpadded pixels (m_p = 0), normalized by their count.
template <typename T>
T supervised_depth_loss(const Tensor<T>& d_hat, const Tensor<T>& d,
                        const Tensor<T>& m_p) {
  if (!d_hat.same_shape(d) || !d_hat.same_shape(m_p))
    throw std::invalid_argument("supervised_depth_loss: shape mismatch");
  T acc = T(0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (m_p[i] != T(0)) continue;
    acc += std::abs(d_hat[i] - d[i]);
    ++count;
  }
  if (count == 0)
    throw std::invalid_argument("supervised_depth_loss: no unpadded pixels");
  return acc / static_cast<T>(count);
}

inline double giou_loss(const Box& pred, const Box& gt) {
  return 1.0 - giou(pred, gt);
}

// L_tk = lambda_giou * (1 - GIoU) + lambda_l1 * mean|coord difference|.
inline double tracking_loss(const Box& pred, const Box& gt, const LossWeights& w) {
  double l1 = (std::abs(pred.x - gt.x) + std::abs(pred.y - gt.y) +
               std::abs(pred.w - gt.w) + std::abs(pred.h - gt.h)) /
              4.0;
  return w.lambda_giou * giou_loss(pred, gt) + w.lambda_l1 * l1;
}

inline double total_loss(Strategy s, double tracking, double depth_aux,
                         double alpha) {
  if (is_track_only(s)) return tracking;
  return (1.0 - alpha) * tracking + alpha * depth_aux;
}

// ---------------------------------------------------------------------------
// Tape versions. These mirror the pure functions and are what training and
// the finite-difference suite consume.
// ---------------------------------------------------------------------------

// GIoU loss on an (x, y, w, h) 4-vector pair.
template <typename T>
ad::Var<T> giou_loss_var(ad::Var<T> pred, ad::Var<T> gt) {
  using ad::add;
  using ad::mul;
  using ad::pick;
  using ad::sub;
  auto ax1 = pick(pred, 0), ay1 = pick(pred, 1);
  auto aw = pick(pred, 2), ah = pick(pred, 3);
  auto bx1 = pick(gt, 0), by1 = pick(gt, 1);
  auto bw = pick(gt, 2), bh = pick(gt, 3);
  auto ax2 = add(ax1, aw), ay2 = add(ay1, ah);
  auto bx2 = add(bx1, bw), by2 = add(by1, bh);

  auto iw = ad::vmax_const(sub(ad::vmin(ax2, bx2), ad::vmax(ax1, bx1)), T(0));
  auto ih = ad::vmax_const(sub(ad::vmin(ay2, by2), ad::vmax(ay1, by1)), T(0));
  auto inter = mul(iw, ih);
  // Corner-based areas, matching Box::area().
  auto area_a = mul(sub(ax2, ax1), sub(ay2, ay1));
  auto area_b = mul(sub(bx2, bx1), sub(by2, by1));
  auto uni = sub(add(area_a, area_b), inter);
  auto ew = sub(ad::vmax(ax2, bx2), ad::vmin(ax1, bx1));
  auto eh = sub(ad::vmax(ay2, by2), ad::vmin(ay1, by1));
  auto enclose = mul(ew, eh);
  auto giou_v = sub(ad::div(inter, uni), ad::div(sub(enclose, uni), enclose));
  return ad::add_const(ad::neg(giou_v), T(1));
}

template <typename T>
ad::Var<T> tracking_loss_var(ad::Var<T> pred, ad::Var<T> gt,
                             const LossWeights& w) {
  auto g = ad::mul_const(giou_loss_var(pred, gt), static_cast<T>(w.lambda_giou));
  auto l1 = ad::mul_const(ad::mean_all(ad::vabs(ad::sub(pred, gt))),
                          static_cast<T>(w.lambda_l1));
  return ad::add(g, l1);
}

template <typename T>
ad::Var<T> supervised_depth_loss_var(ad::Var<T> d_hat, ad::Var<T> d,
                                     const Tensor<T>& m_p,
                                     LossWeights::Norm norm = LossWeights::Norm::contributing) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < m_p.size(); ++i)
    if (m_p[i] == T(0)) ++count;
  if (count == 0)
    throw std::invalid_argument("supervised_depth_loss: no unpadded pixels");
  T denom = norm == LossWeights::Norm::contributing
                ? static_cast<T>(count)
                : static_cast<T>(m_p.size());
  Tensor<T> weight(m_p.shape());
  for (std::size_t i = 0; i < m_p.size(); ++i)
    weight[i] = m_p[i] == T(0) ? T(1) / denom : T(0);
  return ad::weighted_sum(ad::vabs(ad::sub(d_hat, d)), weight);
}

// Masked SSIM: 3x3 windows restricted to valid pixels, output defined where
// the center pixel is valid. Never reads a pixel with valid = 0, which is
// what makes padding exclusion exact.
template <typename T>
ad::Var<T> ssim_masked_var(ad::Var<T> a, ad::Var<T> b, const Tensor<T>& valid) {
  using ad::add;
  using ad::add_const;
  using ad::box3_masked;
  using ad::div;
  using ad::mul;
  using ad::mul_const;
  using ad::sub;
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  auto mu_a = box3_masked(a, valid);
  auto mu_b = box3_masked(b, valid);
  auto e_aa = box3_masked(mul(a, a), valid);
  auto e_bb = box3_masked(mul(b, b), valid);
  auto e_ab = box3_masked(mul(a, b), valid);
  auto var_a = sub(e_aa, mul(mu_a, mu_a));
  auto var_b = sub(e_bb, mul(mu_b, mu_b));
  auto cov = sub(e_ab, mul(mu_a, mu_b));
  auto num = mul(add_const(mul_const(mul(mu_a, mu_b), T(2)), c1),
                 add_const(mul_const(cov, T(2)), c2));
  auto den = mul(add_const(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1),
                 add_const(add(var_a, var_b), c2));
  return ad::mean_channels(div(num, den));
}

// Masked photometric error as an HxWx1 map. Values on invalid pixels are
// meaningless and must be excluded downstream via the same mask. A frozen
// l1_sign replaces |d| with sign*d so replayed probes stay on one linear
// piece; both agree bitwise at the capture point.
template <typename T>
ad::Var<T> photometric_error_masked_var(ad::Var<T> target, ad::Var<T> cand,
                                        const Tensor<T>& valid, double beta,
                                        const Tensor<T>* l1_sign = nullptr) {
  auto s = ssim_masked_var(target, cand, valid);
  auto ssim_term =
      ad::mul_const(ad::add_const(ad::neg(s), T(1)), static_cast<T>(beta / 2));
  auto diff = ad::sub(target, cand);
  auto l1 = ad::mean_channels(l1_sign ? ad::mul_mask(diff, *l1_sign)
                                      : ad::vabs(diff));
  auto l1_term = ad::mul_const(l1, static_cast<T>(1.0 - beta));
  return ad::add(ssim_term, l1_term);
}

// Pure counterpart used for the stationary-mask comparison.
template <typename T>
Tensor<T> photometric_error_masked(const Tensor<T>& target, const Tensor<T>& cand,
                                   const Tensor<T>& valid, double beta) {
  ad::Graph<T> g;
  auto pe = photometric_error_masked_var(ad::leaf(g, target, false),
                                         ad::leaf(g, cand, false), valid, beta);
  return pe.value();
}

// Discrete decisions captured once and replayed during finite-difference
// probing so the loss stays smooth around the evaluation point. Training
// passes nullptr and recomputes everything live.
template <typename T>
struct SelfsupScaleStructure {
  Tensor<T> v_prev, v_next;          // per-source usable pixels
  Tensor<T> cells_prev, cells_next;  // bilinear tap cells per source
  Tensor<T> l1_sign_prev, l1_sign_next;  // signs of target - warped
  Tensor<T> sel;                     // 1 -> take prev pe, 0 -> take next pe
  Tensor<T> photo_weight;            // contributing mask scaled by the normalizer
  double coverage = 0;               // m_s statistics on unpadded pixels
};

template <typename T>
struct SelfsupStructure {
  bool captured = false;
  std::vector<SelfsupScaleStructure<T>> scales;
};

template <typename T>
struct SelfsupResult {
  ad::Var<T> aux;
  LossReport report;
};

namespace detail {

template <typename T>
Tensor<T> sign_of(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T d = a[i] - b[i];
    out[i] = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
  }
  return out;
}

// True where the bilinear sample at coords touches only unpadded source
// pixels: all four taps must have m_p = 0 (and the projection must be valid).
template <typename T>
Tensor<T> taps_unpadded(const Tensor<T>& coords, const Tensor<T>& m_p) {
  const int h = m_p.dim(0), w = m_p.dim(1);
  Tensor<T> out({h, w}, TensorRole::Mask);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      T x = std::clamp(coords.at(v, u, 0), T(0), static_cast<T>(w - 1));
      T y = std::clamp(coords.at(v, u, 1), T(0), static_cast<T>(h - 1));
      int x0 = static_cast<int>(std::floor(x));
      int y0 = static_cast<int>(std::floor(y));
      int x1 = std::min(x0 + 1, w - 1);
      int y1 = std::min(y0 + 1, h - 1);
      bool ok = m_p.at(y0, x0) == T(0) && m_p.at(y0, x1) == T(0) &&
                m_p.at(y1, x0) == T(0) && m_p.at(y1, x1) == T(0);
      out.at(v, u) = ok ? T(1) : T(0);
    }
  }
  return out;
}

}  // namespace detail

// Smoothness on the tape, edge weights from the image, pairs restricted to a
// validity mask (all-ones mask reproduces the pure smoothness_loss).
template <typename T>
ad::Var<T> smoothness_loss_var(ad::Var<T> disp_hw1, ad::Var<T> img,
                               const Tensor<T>& valid) {
  const int h = disp_hw1.shape()[0], w = disp_hw1.shape()[1];
  for (std::size_t i = 0; i < disp_hw1.value().size(); ++i)
    if (!(disp_hw1.value()[i] > T(0)))
      throw std::invalid_argument("smoothness_loss: disparity must be positive");

  auto dstar = ad::div_by_scalar(disp_hw1, ad::mean_all(disp_hw1));
  auto adx = ad::vabs(ad::shift_diff_x(dstar));
  auto ady = ad::vabs(ad::shift_diff_y(dstar));
  auto wx = ad::vexp(ad::neg(ad::mean_channels(ad::vabs(ad::shift_diff_x(img)))));
  auto wy = ad::vexp(ad::neg(ad::mean_channels(ad::vabs(ad::shift_diff_y(img)))));

  Tensor<T> mx({h, w - 1, 1});
  Tensor<T> my({h - 1, w, 1});
  T nx = T(0), ny = T(0);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u + 1 < w; ++u) {
      T m = valid.at(v, u) * valid.at(v, u + 1);
      mx.at(v, u, 0) = m;
      nx += m;
    }
  for (int v = 0; v + 1 < h; ++v)
    for (int u = 0; u < w; ++u) {
      T m = valid.at(v, u) * valid.at(v + 1, u);
      my.at(v, u, 0) = m;
      ny += m;
    }
  if (nx > T(0))
    for (std::size_t i = 0; i < mx.size(); ++i) mx[i] /= nx;
  if (ny > T(0))
    for (std::size_t i = 0; i < my.size(); ++i) my[i] /= ny;

  auto tx = ad::weighted_sum(ad::mul(adx, wx), mx);
  auto ty = ad::weighted_sum(ad::mul(ady, wy), my);
  return ad::add(tx, ty);
}

// Eq.-9-style auxiliary loss: multi-scale disparities upsampled to full
// resolution, converted to depth, warped from both sources, min-reprojection,
// stationary mask, padding exclusion, plus edge-aware smoothness per scale.
template <typename T>
SelfsupResult<T> selfsup_depth_loss_var(
    const std::vector<ad::Var<T>>& disp_scales, ad::Var<T> target,
    ad::Var<T> prev, ad::Var<T> next, ad::Var<T> pose_prev,
    ad::Var<T> pose_next, const Intrinsics& K, const Tensor<T>& m_p,
    const LossWeights& w, SelfsupStructure<T>* frozen = nullptr) {
  if (disp_scales.size() != 4)
    throw std::invalid_argument("selfsup_depth_loss: expected 4 scales");
  ad::Graph<T>& g = *target.g;
  const int h = target.shape()[0], wd = target.shape()[1];

  Tensor<T> valid_t({h, wd}, TensorRole::Mask);
  std::size_t n_valid = 0;
  for (std::size_t i = 0; i < m_p.size(); ++i) {
    valid_t[i] = m_p[i] == T(0) ? T(1) : T(0);
    n_valid += valid_t[i] == T(1) ? 1 : 0;
  }

  const bool replay = frozen && frozen->captured;
  if (frozen && !frozen->captured) frozen->scales.resize(4);

  // Identity (unwarped) photometric errors for the stationary mask; plain
  // tensors, no gradient path.
  std::vector<Tensor<T>> pe_id;
  if (!replay) {
    pe_id.push_back(
        photometric_error_masked(target.value(), prev.value(), valid_t, w.beta));
    pe_id.push_back(
        photometric_error_masked(target.value(), next.value(), valid_t, w.beta));
  }

  ad::Var<T> aux = ad::scalar(g, T(0));
  LossReport report;
  double coverage_sum = 0;

  for (int s = 0; s < 4; ++s) {
    auto disp_full = ad::upsample_bilinear(disp_scales[s], h, wd);
    auto denom = ad::add_const(
        ad::mul_const(disp_full, static_cast<T>(kDispA)), static_cast<T>(kDispB));
    auto depth =
        ad::reshape(ad::div(ad::constant(g, Tensor<T>::full({h, wd, 1}, T(1))),
                            denom),
                    {h, wd});

    auto wc_prev = ad::warp_coords_var(depth, pose_prev, K);
    auto wc_next = ad::warp_coords_var(depth, pose_next, K);

    SelfsupScaleStructure<T> st;
    if (replay) {
      st = frozen->scales[static_cast<std::size_t>(s)];
    } else {
      st.cells_prev = ad::bilinear_cells(wc_prev.coords.value(), h, wd);
      st.cells_next = ad::bilinear_cells(wc_next.coords.value(), h, wd);
      auto tp_prev = detail::taps_unpadded(wc_prev.coords.value(), m_p);
      auto tp_next = detail::taps_unpadded(wc_next.coords.value(), m_p);
      st.v_prev = Tensor<T>({h, wd}, TensorRole::Mask);
      st.v_next = Tensor<T>({h, wd}, TensorRole::Mask);
      for (std::size_t i = 0; i < valid_t.size(); ++i) {
        st.v_prev[i] = valid_t[i] * wc_prev.valid[i] * tp_prev[i];
        st.v_next[i] = valid_t[i] * wc_next.valid[i] * tp_next[i];
      }
    }
    auto warped_prev = ad::grid_sample_var(prev, wc_prev.coords, &st.cells_prev);
    auto warped_next = ad::grid_sample_var(next, wc_next.coords, &st.cells_next);

    if (frozen && !replay) {
      st.l1_sign_prev = detail::sign_of(target.value(), warped_prev.value());
      st.l1_sign_next = detail::sign_of(target.value(), warped_next.value());
    }
    const Tensor<T>* sp = frozen ? &st.l1_sign_prev : nullptr;
    const Tensor<T>* sn = frozen ? &st.l1_sign_next : nullptr;
    auto pe_prev =
        photometric_error_masked_var(target, warped_prev, st.v_prev, w.beta, sp);
    auto pe_next =
        photometric_error_masked_var(target, warped_next, st.v_next, w.beta, sn);

    if (!replay) {
      // Source selection: valid sources win, ties and double-valid pixels by
      // the smaller error (prev on exact tie).
      st.sel = Tensor<T>({h, wd, 1});
      for (int i = 0; i < h * wd; ++i) {
        bool vp = st.v_prev[static_cast<std::size_t>(i)] == T(1);
        bool vn = st.v_next[static_cast<std::size_t>(i)] == T(1);
        if (vp && vn)
          st.sel[i] = pe_prev.value()[i] <= pe_next.value()[i] ? T(1) : T(0);
        else
          st.sel[i] = vp ? T(1) : T(0);
      }
      // Stationary mask and the final photometric weights.
      Tensor<T> contributing({h, wd});
      std::size_t n_cover = 0, n_contrib = 0;
      for (int i = 0; i < h * wd; ++i) {
        bool vp = st.v_prev[static_cast<std::size_t>(i)] == T(1);
        bool vn = st.v_next[static_cast<std::size_t>(i)] == T(1);
        if (!vp && !vn) {
          contributing[i] = T(0);
          continue;
        }
        T min_warp = st.sel[i] == T(1) ? pe_prev.value()[i] : pe_next.value()[i];
        T min_id = std::min(pe_id[0][i], pe_id[1][i]);
        bool ms = min_warp < min_id;
        contributing[i] = ms ? T(1) : T(0);
        if (ms) {
          ++n_cover;
          ++n_contrib;
        }
      }
      st.coverage =
          n_valid > 0 ? static_cast<double>(n_cover) / static_cast<double>(n_valid)
                      : 0.0;
      T denom_px = w.norm == LossWeights::Norm::contributing
                       ? static_cast<T>(std::max<std::size_t>(n_contrib, 1))
                       : static_cast<T>(h * wd);
      st.photo_weight = Tensor<T>({h, wd, 1});
      for (int i = 0; i < h * wd; ++i)
        st.photo_weight[i] = contributing[i] / denom_px;
      if (frozen) frozen->scales[static_cast<std::size_t>(s)] = st;
    }

    auto min_pe = ad::select_mask(st.sel, pe_prev, pe_next);
    auto photo = ad::weighted_sum(min_pe, st.photo_weight);
    auto smooth = smoothness_loss_var(disp_full, target, valid_t);
    auto scale_total =
        ad::add(photo, ad::mul_const(smooth, static_cast<T>(w.lambda_smooth)));

    report.per_scale.push_back(static_cast<double>(scale_total.value()[0]));
    coverage_sum += st.coverage;
    aux = ad::add(aux, scale_total);
  }
  if (frozen) frozen->captured = true;

  aux = ad::mul_const(aux, T(0.25));
  report.depth_aux = static_cast<double>(aux.value()[0]);
  report.mask_coverage = coverage_sum / 4.0;
  return {aux, report};
}

}  // namespace auxtrack

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "auxtrack/box.hpp"
#include "auxtrack/core/rng.hpp"
#include "auxtrack/core/tensor.hpp"

namespace auxtrack {

inline constexpr int kSearchSide = 256;
inline constexpr int kTemplateSide = 128;
inline constexpr double kSearchCropFactor = 4.0;
inline constexpr double kTemplateCropFactor = 2.0;
inline constexpr int kFrameRange = 5;  // R
inline constexpr double kCenterJitter = 0.25;  // fraction of box side
inline constexpr double kScaleJitter = 0.25;   // size factor in [0.8, 1.25]

struct FrameTriplet {
  int t = 0, t_prev = 0, t_next = 0;
};

// Adjacent-frame sampling: for each direction d the candidate set is the open
// interval between t and t+dR intersected with P; an empty set falls back to
// t itself.
inline FrameTriplet sample_frame_pair(const std::vector<int>& P, int t, int R,
                                      Rng& rng) {
  if (R < 1) throw std::invalid_argument("sample_frame_pair: R must be >= 1");
  if (!std::binary_search(P.begin(), P.end(), t))
    throw std::invalid_argument("sample_frame_pair: t not in valid set");
  auto draw = [&](int d) {
    const int lo = std::min(t, t + d * R), hi = std::max(t, t + d * R);
    std::vector<int> cand;
    for (int i : P)
      if (i > lo && i < hi) cand.push_back(i);
    if (cand.empty()) return t;
    return cand[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(cand.size()) - 1))];
  };
  FrameTriplet out;
  out.t = t;
  out.t_prev = draw(-1);
  out.t_next = draw(+1);
  return out;
}

// Center shift bounded by center_jitter * sqrt(w*h) per axis; per-axis size
// factors uniform in [1/(1+scale_jitter), 1+scale_jitter]. The result is
// translated back into the frame, so its center stays strictly inside.
inline Box jitter_box(const Box& box, double center_jitter, double scale_jitter,
                      int frame_w, int frame_h, Rng& rng) {
  if (!(box.w > 0.0) || !(box.h > 0.0))
    throw std::invalid_argument("jitter_box: degenerate box");
  if (center_jitter < 0.0 || scale_jitter < 0.0)
    throw std::invalid_argument("jitter_box: negative jitter");
  const double side = std::sqrt(box.w * box.h);
  const double dx = rng.uniform(-center_jitter, center_jitter) * side;
  const double dy = rng.uniform(-center_jitter, center_jitter) * side;
  const double fw = rng.uniform(1.0 / (1.0 + scale_jitter), 1.0 + scale_jitter);
  const double fh = rng.uniform(1.0 / (1.0 + scale_jitter), 1.0 + scale_jitter);

  Box out;
  out.w = std::min(box.w * fw, static_cast<double>(frame_w));
  out.h = std::min(box.h * fh, static_cast<double>(frame_h));
  out.x = box.x + box.w / 2 + dx - out.w / 2;
  out.y = box.y + box.h / 2 + dy - out.h / 2;
  out.x = std::clamp(out.x, 0.0, frame_w - out.w);
  out.y = std::clamp(out.y, 0.0, frame_h - out.h);
  return out;
}

// Square source window and its mapping onto the output crop. Output pixel
// (u, v) samples the source at half-pixel centers:
//   x_src = x0 + (u + 0.5) * side / out_side
struct CropSpec {
  double cx = 0.0, cy = 0.0;  // window center, source pixels
  double side = 0.0;          // window side, source pixels
  int out_side = 0;
  int frame_w = 0, frame_h = 0;

  double scale() const { return out_side / side; }
  double x0() const { return cx - side / 2; }
  double y0() const { return cy - side / 2; }

  double src_x(double u) const { return x0() + (u + 0.5) * side / out_side; }
  double src_y(double v) const { return y0() + (v + 0.5) * side / out_side; }

  // Source-frame coordinate -> crop coordinate (continuous pixels).
  double to_crop_x(double x) const { return (x - x0()) * scale(); }
  double to_crop_y(double y) const { return (y - y0()) * scale(); }
  double from_crop_x(double u) const { return u / scale() + x0(); }
  double from_crop_y(double v) const { return v / scale() + y0(); }
};

inline Box box_to_crop(const Box& b, const CropSpec& s) {
  return {s.to_crop_x(b.x), s.to_crop_y(b.y), b.w * s.scale(), b.h * s.scale()};
}

inline Box box_from_crop(const Box& b, const CropSpec& s) {
  return {s.from_crop_x(b.x), s.from_crop_y(b.y), b.w / s.scale(),
          b.h / s.scale()};
}

template <typename T>
struct CropResult {
  Tensor<T> image;  // (out, out, C)
  Tensor<T> m_p;    // (out, out), 1 on padded pixels
  CropSpec spec;
};

namespace detail {

// Bilinear sample with border clamp; the caller decides padding separately.
template <typename T>
T bilinear_at(const Tensor<T>& img, double x, double y, int c) {
  const int h = img.dim(0), w = img.dim(1), ch = img.dim(2);
  const double fx = x - 0.5, fy = y - 0.5;  // half-pixel centers
  int x0 = static_cast<int>(std::floor(fx));
  int y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  const auto at = [&](int yy, int xx) {
    yy = std::clamp(yy, 0, h - 1);
    xx = std::clamp(xx, 0, w - 1);
    return static_cast<double>(
        img[(static_cast<std::size_t>(yy) * w + xx) * ch + c]);
  };
  const double top = at(y0, x0) + ax * (at(y0, x0 + 1) - at(y0, x0));
  const double bot = at(y0 + 1, x0) + ax * (at(y0 + 1, x0 + 1) - at(y0 + 1, x0));
  return static_cast<T>(top + ay * (bot - top));
}

}  // namespace detail

// The padding mask depends only on the window geometry: a crop pixel is
// padded exactly when its source sample point leaves the frame rectangle
// [0, W] x [0, H] (half-pixel center convention).
inline Tensor<float> padding_mask(const CropSpec& s) {
  Tensor<float> m({s.out_side, s.out_side}, TensorRole::Mask);
  for (int v = 0; v < s.out_side; ++v)
    for (int u = 0; u < s.out_side; ++u) {
      const double x = s.src_x(u), y = s.src_y(v);
      const bool inside =
          x >= 0.0 && x <= s.frame_w && y >= 0.0 && y <= s.frame_h;
      m.at(v, u) = inside ? 0.0f : 1.0f;
    }
  return m;
}

// Applies an existing window to a frame, so the crops of a frame pair can
// share one CropSpec.
template <typename T>
CropResult<T> apply_crop(const Tensor<T>& frame, const CropSpec& spec) {
  if (frame.rank() != 3)
    throw std::invalid_argument("apply_crop: frame must be HxWxC");
  if (frame.dim(0) != spec.frame_h || frame.dim(1) != spec.frame_w)
    throw std::invalid_argument("apply_crop: frame size does not match spec");
  const int ch = frame.dim(2);
  Tensor<float> mask = padding_mask(spec);

  CropResult<T> out;
  out.spec = spec;
  out.image = Tensor<T>({spec.out_side, spec.out_side, ch}, TensorRole::Image);
  out.m_p = Tensor<T>({spec.out_side, spec.out_side}, TensorRole::Mask);
  for (int v = 0; v < spec.out_side; ++v)
    for (int u = 0; u < spec.out_side; ++u) {
      out.m_p.at(v, u) = static_cast<T>(mask.at(v, u));
      if (mask.at(v, u) != 0.0f) continue;  // padded pixels stay 0
      const double x = spec.src_x(u), y = spec.src_y(v);
      for (int c = 0; c < ch; ++c)
        out.image.at(v, u, c) = detail::bilinear_at(frame, x, y, c);
    }
  return out;
}

template <typename T>
CropResult<T> crop_pad(const Tensor<T>& frame, const Box& box,
                       double crop_factor, int out_side) {
  if (frame.rank() != 3) throw std::invalid_argument("crop_pad: frame must be HxWxC");
  const int h = frame.dim(0), w = frame.dim(1);
  const double cx = box.x + box.w / 2, cy = box.y + box.h / 2;
  if (cx < 0 || cx > w || cy < 0 || cy > h)
    throw std::invalid_argument("crop_pad: box center outside frame");
  const double side = crop_factor * std::sqrt(box.w * box.h);
  if (!(side >= 2.0)) throw std::invalid_argument("crop_pad: window under 2 px");
  return apply_crop(frame, CropSpec{cx, cy, side, out_side, w, h});
}

// Depth resamples with nearest neighbor so object boundaries never blend.
template <typename T>
Tensor<T> crop_depth(const Tensor<T>& depth, const CropSpec& s) {
  if (depth.rank() != 2) throw std::invalid_argument("crop_depth: depth must be HxW");
  const int h = depth.dim(0), w = depth.dim(1);
  Tensor<T> out({s.out_side, s.out_side}, TensorRole::Depth);
  for (int v = 0; v < s.out_side; ++v)
    for (int u = 0; u < s.out_side; ++u) {
      const double x = s.src_x(u), y = s.src_y(v);
      if (x < 0.0 || x > s.frame_w || y < 0.0 || y > s.frame_h) continue;
      const int xi = std::clamp(static_cast<int>(std::floor(x)), 0, w - 1);
      const int yi = std::clamp(static_cast<int>(std::floor(y)), 0, h - 1);
      out.at(v, u) = depth.at(yi, xi);
    }
  return out;
}

template <typename T>
struct Sample {
  Tensor<T> tmpl;                         // (128,128,3)
  Tensor<T> search_t, search_prev, search_next;  // (256,256,3)
  Tensor<T> m_p;                          // (256,256)
  Box gt_box;                             // search-crop pixels
  std::optional<Tensor<T>> gt_depth;      // (256,256), frame-t depth
  CropSpec crop;
  FrameTriplet frames;
  std::uint64_t rng_seed = 0;
};

struct AugmentConfig {
  double p_gray = 0.05;
  double p_brightness = 0.20;
  double p_flip = 0.50;
  double brightness_lo = 0.8, brightness_hi = 1.2;
};

namespace detail {

template <typename T>
void to_gray(Tensor<T>& img) {
  const int h = img.dim(0), w = img.dim(1);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const double y = 0.299 * img.at(v, u, 0) + 0.587 * img.at(v, u, 1) +
                       0.114 * img.at(v, u, 2);
      for (int c = 0; c < 3; ++c) img.at(v, u, c) = static_cast<T>(y);
    }
}

template <typename T>
void scale_values(Tensor<T>& img, double f) {
  for (std::size_t i = 0; i < img.size(); ++i)
    img[i] = static_cast<T>(std::clamp(static_cast<double>(img[i]) * f, 0.0, 1.0));
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& t) {
  Tensor<T> out(t.shape(), t.role());
  const int h = t.dim(0), w = t.dim(1);
  const int ch = t.rank() == 3 ? t.dim(2) : 1;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u)
      for (int c = 0; c < ch; ++c)
        out[(static_cast<std::size_t>(v) * w + u) * ch + c] =
            t[(static_cast<std::size_t>(v) * w + (w - 1 - u)) * ch + c];
  return out;
}

}  // namespace detail

// Horizontal mirror of every spatial field; an involution.
template <typename T>
Sample<T> flip_sample(const Sample<T>& s) {
  Sample<T> out = s;
  out.tmpl = detail::hflip(s.tmpl);
  out.search_t = detail::hflip(s.search_t);
  out.search_prev = detail::hflip(s.search_prev);
  out.search_next = detail::hflip(s.search_next);
  out.m_p = detail::hflip(s.m_p);
  if (s.gt_depth) out.gt_depth = detail::hflip(*s.gt_depth);
  out.gt_box.x = s.m_p.dim(1) - s.gt_box.x - s.gt_box.w;
  return out;
}

// One consistent draw applied to the whole sample: grayscale, brightness,
// horizontal flip. Draw order is fixed so a seeded generator reproduces the
// augmentation exactly.
template <typename T>
Sample<T> augment(const Sample<T>& s, const AugmentConfig& cfg, Rng& rng) {
  Sample<T> out = s;
  if (rng.bernoulli(cfg.p_gray)) {
    detail::to_gray(out.tmpl);
    detail::to_gray(out.search_t);
    detail::to_gray(out.search_prev);
    detail::to_gray(out.search_next);
  }
  if (rng.bernoulli(cfg.p_brightness)) {
    const double f = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
    detail::scale_values(out.tmpl, f);
    detail::scale_values(out.search_t, f);
    detail::scale_values(out.search_prev, f);
    detail::scale_values(out.search_next, f);
  }
  if (rng.bernoulli(cfg.p_flip)) out = flip_sample(out);
  return out;
}

}  // namespace auxtrack

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "auxtrack/box.hpp"
#include "auxtrack/core/rng.hpp"
#include "auxtrack/core/tensor.hpp"
#include "auxtrack/dataset.hpp"
#include "auxtrack/geometry.hpp"

namespace auxtrack {

// Synthetic scenes: textured fronto-parallel rectangles in world space viewed
// by a (possibly moving) pinhole camera. Every quantity the renderer writes
// (image, depth, box, pose) comes from the same closed-form geometry, so
// ground truth is exact by construction.

inline constexpr double kSceneMinDepth = 0.5;
inline constexpr double kSceneMaxDepth = 50.0;
inline constexpr double kMaxFrameRotStep = 0.05;    // rad per frame, any axis
inline constexpr double kMaxFrameTransStep = 0.2;   // world units per frame
inline constexpr double kMinBoxAreaPx = 64.0;
inline constexpr double kMinVisibleFrac = 0.9;

namespace detail {

inline double noise_lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  const std::uint64_t h = mix_seed(seed, static_cast<std::uint64_t>(ix),
                                   static_cast<std::uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double noise_fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

inline double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  const double tx = noise_fade(x - fx), ty = noise_fade(y - fy);
  const double v00 = noise_lattice(seed, ix, iy);
  const double v10 = noise_lattice(seed, ix + 1, iy);
  const double v01 = noise_lattice(seed, ix, iy + 1);
  const double v11 = noise_lattice(seed, ix + 1, iy + 1);
  const double top = v00 + tx * (v10 - v00);
  const double bot = v01 + tx * (v11 - v01);
  return top + ty * (bot - top);
}

inline double fractal_noise(std::uint64_t seed, double x, double y) {
  double amp = 1.0, freq = 1.0, sum = 0.0, norm = 0.0;
  for (int octave = 0; octave < 3; ++octave) {
    sum += amp * value_noise(mix_seed(seed, 0x9eULL, octave), x * freq, y * freq);
    norm += amp;
    amp *= 0.55;
    freq *= 2.0;
  }
  return sum / norm;
}

// Walks stay inside [lo, hi]; steps are small enough for a single bounce.
inline double reflect_into(double v, double lo, double hi) {
  if (v < lo) return lo + (lo - v);
  if (v > hi) return hi - (v - hi);
  return v;
}

}  // namespace detail

// Deterministic surface color in [0,1], evaluated at surface-local coords so
// texture rides along with a moving object.
inline double texture_value(std::uint64_t seed, double freq, double x, double y,
                            int channel) {
  return 0.15 + 0.7 * detail::fractal_noise(mix_seed(seed, 0xc0ULL, channel),
                                            x * freq, y * freq);
}

// Fronto-parallel rectangle at world z = depth, centered at (cx, cy).
struct PlaneSpec {
  double z = 0, cx = 0, cy = 0, half_w = 0, half_h = 0;
  std::uint64_t tex_seed = 0;
  double tex_freq = 1.0;
};

struct TargetState {
  double cx = 0, cy = 0, z = 0;
};

struct SceneSpec {
  int width = 320, height = 240;
  Intrinsics k;
  int n_frames = 0;
  std::vector<PlaneSpec> statics;  // background, mid planes, distractors
  double target_half_w = 0, target_half_h = 0;
  std::uint64_t target_tex_seed = 0;
  double target_tex_freq = 1.0;
  std::vector<TargetState> target;  // one per frame
  std::vector<Pose6DoF> camera;     // camera-from-world, one per frame

  PlaneSpec target_plane(int t) const {
    const TargetState& s = target.at(t);
    return {s.z, s.cx, s.cy, target_half_w, target_half_h,
            target_tex_seed, target_tex_freq};
  }

  void validate() const;
};

struct RenderedFrame {
  Tensor<float> rgb;    // HxWx3, [0,1]
  Tensor<float> depth;  // HxW, camera-frame depth
  Box box;              // target bounds, pixels
};

// Axis-aligned bounds of the target's projected corners, clipped to the frame.
inline Box project_target_box(const SceneSpec& spec, int t) {
  const PlaneSpec p = spec.target_plane(t);
  const Pose6DoF& pose = spec.camera.at(t);
  const Eigen::Matrix3d r = rotation_from_axis_angle(pose.rotation);
  double u_min = std::numeric_limits<double>::infinity(), u_max = -u_min;
  double v_min = u_min, v_max = -u_min;
  for (int sy = -1; sy <= 1; sy += 2)
    for (int sx = -1; sx <= 1; sx += 2) {
      const Eigen::Vector3d w(p.cx + sx * p.half_w, p.cy + sy * p.half_h, p.z);
      const Eigen::Vector3d cam = r * w + pose.translation;
      if (cam.z() < kZMin)
        throw std::runtime_error("project_target_box: corner behind camera");
      const double u = spec.k.focal * cam.x() / cam.z() + spec.k.cx;
      const double v = spec.k.focal * cam.y() / cam.z() + spec.k.cy;
      u_min = std::min(u_min, u);
      u_max = std::max(u_max, u);
      v_min = std::min(v_min, v);
      v_max = std::max(v_max, v);
    }
  u_min = std::clamp(u_min, 0.0, static_cast<double>(spec.width));
  u_max = std::clamp(u_max, 0.0, static_cast<double>(spec.width));
  v_min = std::clamp(v_min, 0.0, static_cast<double>(spec.height));
  v_max = std::clamp(v_max, 0.0, static_cast<double>(spec.height));
  return {u_min, v_min, u_max - u_min, v_max - v_min};
}

inline void SceneSpec::validate() const {
  k.validate();
  if (n_frames < 1) throw std::invalid_argument("scene: n_frames < 1");
  if (static_cast<int>(target.size()) != n_frames ||
      static_cast<int>(camera.size()) != n_frames)
    throw std::invalid_argument("scene: per-frame arrays must match n_frames");
  if (statics.empty()) throw std::invalid_argument("scene: no background");
  if (target_half_w <= 0 || target_half_h <= 0)
    throw std::invalid_argument("scene: degenerate target");
  for (const auto& p : statics)
    if (p.z < kSceneMinDepth + kMaxFrameTransStep * 2 ||
        p.z > kSceneMaxDepth - kMaxFrameTransStep * 2)
      throw std::invalid_argument("scene: static surface depth out of range");
  for (const auto& s : target)
    if (s.z < kSceneMinDepth * 2 || s.z > kSceneMaxDepth / 2)
      throw std::invalid_argument("scene: target depth out of range");
  for (int t = 1; t < n_frames; ++t) {
    const Eigen::Vector3d dr = camera[t].rotation - camera[t - 1].rotation;
    const Eigen::Vector3d dt = camera[t].translation - camera[t - 1].translation;
    if (dr.cwiseAbs().maxCoeff() >= kMaxFrameRotStep)
      throw std::invalid_argument("scene: camera rotation step too large");
    if (dt.cwiseAbs().maxCoeff() >= kMaxFrameTransStep)
      throw std::invalid_argument("scene: camera translation step too large");
  }
  int visible = 0;
  for (int t = 0; t < n_frames; ++t) {
    const Box b = project_target_box(*this, t);
    if (b.w * b.h >= kMinBoxAreaPx) ++visible;
  }
  if (visible < static_cast<int>(std::ceil(kMinVisibleFrac * n_frames)))
    throw std::invalid_argument("scene: target visible in too few frames");
}

inline RenderedFrame render_frame(const SceneSpec& spec, int t) {
  const Pose6DoF& pose = spec.camera.at(t);
  const Eigen::Matrix3d rt = rotation_from_axis_angle(pose.rotation).transpose();
  const Eigen::Vector3d wt = rt * pose.translation;

  std::vector<PlaneSpec> surfaces;
  surfaces.reserve(spec.statics.size() + 1);
  surfaces.push_back(spec.target_plane(t));
  surfaces.insert(surfaces.end(), spec.statics.begin(), spec.statics.end());

  RenderedFrame out;
  out.rgb = Tensor<float>({spec.height, spec.width, 3}, TensorRole::Image);
  out.depth = Tensor<float>({spec.height, spec.width}, TensorRole::Depth);

  for (int v = 0; v < spec.height; ++v) {
    for (int u = 0; u < spec.width; ++u) {
      const Eigen::Vector3d dir((u - spec.k.cx) / spec.k.focal,
                                (v - spec.k.cy) / spec.k.focal, 1.0);
      const Eigen::Vector3d a = rt * dir;
      double best_s = std::numeric_limits<double>::infinity();
      const PlaneSpec* best = nullptr;
      double best_lx = 0, best_ly = 0;
      for (const auto& p : surfaces) {
        if (std::abs(a.z()) < 1e-12) continue;
        const double s = (p.z + wt.z()) / a.z();
        if (s <= kZMin || s >= best_s) continue;
        const double lx = a.x() * s - wt.x() - p.cx;
        const double ly = a.y() * s - wt.y() - p.cy;
        if (std::abs(lx) <= p.half_w && std::abs(ly) <= p.half_h) {
          best_s = s;
          best = &p;
          best_lx = lx;
          best_ly = ly;
        }
      }
      if (best == nullptr)
        throw std::runtime_error("render_frame: ray missed every surface");
      for (int c = 0; c < 3; ++c)
        out.rgb.at(v, u, c) = static_cast<float>(
            texture_value(best->tex_seed, best->tex_freq, best_lx, best_ly, c));
      out.depth.at(v, u) = static_cast<float>(best_s);
    }
  }
  out.box = project_target_box(spec, t);
  return out;
}

// Pose taking frame-a camera coordinates to frame-b camera coordinates.
inline Pose6DoF relative_pose(const Pose6DoF& cam_a, const Pose6DoF& cam_b) {
  return pose_compose(cam_b, pose_inverse(cam_a));
}

inline SceneSpec make_scene(std::uint64_t seed, int n_frames,
                            const std::string& camera_mode) {
  if (n_frames < 1) throw std::invalid_argument("make_scene: n_frames < 1");
  if (camera_mode != "moving" && camera_mode != "static")
    throw std::invalid_argument("make_scene: unknown camera mode " + camera_mode);

  SceneSpec spec;
  spec.n_frames = n_frames;
  spec.k = Intrinsics::pseudo(spec.width, spec.height);

  Rng layout = stream_rng(seed, 0, 0);
  Rng cam_rng = stream_rng(seed, 0, 1);
  Rng tgt_rng = stream_rng(seed, 0, 2);

  const double z_bg = layout.uniform(20.0, 28.0);
  spec.statics.push_back(
      {z_bg, 0.0, 0.0, 3.0 * z_bg, 3.0 * z_bg, mix_seed(seed, 1, 0), 0.3});
  for (int i = 0; i < 2; ++i) {
    const double z = layout.uniform(12.0, 16.0);
    spec.statics.push_back({z, layout.uniform(-4.0, 4.0), layout.uniform(-4.0, 4.0),
                            layout.uniform(2.5, 4.0), layout.uniform(2.5, 4.0),
                            mix_seed(seed, 1, 1 + i), 0.5});
  }

  spec.target_half_w = layout.uniform(0.55, 0.85);
  spec.target_half_h = layout.uniform(0.55, 0.85);
  spec.target_tex_seed = mix_seed(seed, 2, 0);
  spec.target_tex_freq = 1.2;

  // Distractors share the target's texture at clearly different depths.
  for (int i = 0; i < 2; ++i) {
    const double z = 9.0 + 1.5 * i + layout.uniform(0.0, 1.0);
    const double side = (i == 0 ? -1.0 : 1.0);
    const double scale = z / 5.0;
    spec.statics.push_back({z, side * layout.uniform(0.18, 0.3) * z,
                            layout.uniform(-0.12, 0.12) * z,
                            layout.uniform(0.55, 0.85) * scale,
                            layout.uniform(0.55, 0.85) * scale,
                            spec.target_tex_seed, spec.target_tex_freq});
  }

  // Target walks in normalized view coordinates so its projection stays
  // well inside the frame at every depth.
  double nx = tgt_rng.uniform(-0.1, 0.1);
  double ny = tgt_rng.uniform(-0.06, 0.06);
  double z = tgt_rng.uniform(4.0, 6.0);
  spec.target.reserve(n_frames);
  for (int t = 0; t < n_frames; ++t) {
    if (t > 0) {
      nx = detail::reflect_into(nx + tgt_rng.uniform(-0.02, 0.02), -0.3, 0.3);
      ny = detail::reflect_into(ny + tgt_rng.uniform(-0.015, 0.015), -0.15, 0.15);
      z = detail::reflect_into(z + tgt_rng.uniform(-0.12, 0.12), 3.2, 6.8);
    }
    spec.target.push_back({nx * z, ny * z, z});
  }

  spec.camera.assign(n_frames, Pose6DoF{});
  if (camera_mode == "moving") {
    Eigen::Vector3d rot = Eigen::Vector3d::Zero();
    Eigen::Vector3d trans = Eigen::Vector3d::Zero();
    for (int t = 1; t < n_frames; ++t) {
      for (int i = 0; i < 3; ++i) {
        rot[i] = detail::reflect_into(rot[i] + cam_rng.uniform(-0.01, 0.01),
                                      -0.06, 0.06);
        trans[i] = detail::reflect_into(trans[i] + cam_rng.uniform(-0.05, 0.05),
                                        -0.35, 0.35);
      }
      spec.camera[t].rotation = rot;
      spec.camera[t].translation = trans;
    }
  }
  return spec;
}

// Renders a full dataset tree:
//   <root>/manifest.json
//   <root>/seq%03d/{frames,depth}/%06d.png, boxes.txt, meta.json
inline void generate_dataset(const std::string& root, int n_sequences,
                             int frames_per_sequence, std::uint64_t seed,
                             const std::string& camera_mode) {
  namespace fs = std::filesystem;
  if (n_sequences < 1) throw std::invalid_argument("generate_dataset: n_sequences");
  fs::create_directories(root);

  std::vector<std::string> names;
  for (int i = 0; i < n_sequences; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "seq%03d", i);
    names.emplace_back(name);

    const SceneSpec spec = make_scene(mix_seed(seed, i, 0x5eedULL),
                                      frames_per_sequence, camera_mode);
    spec.validate();

    const std::string dir = root + "/" + names.back();
    fs::create_directories(dir + "/frames");
    fs::create_directories(dir + "/depth");

    std::vector<Box> boxes;
    boxes.reserve(frames_per_sequence);
    for (int t = 0; t < frames_per_sequence; ++t) {
      const RenderedFrame f = render_frame(spec, t);
      write_image_png(dir + "/frames/" + detail::frame_name(t), f.rgb);
      write_depth_png(dir + "/depth/" + detail::frame_name(t), f.depth);
      boxes.push_back(f.box);
    }
    write_boxes(dir + "/boxes.txt", boxes);

    SequenceMeta meta;
    meta.width = spec.width;
    meta.height = spec.height;
    meta.valid.resize(frames_per_sequence);
    for (int t = 0; t < frames_per_sequence; ++t) meta.valid[t] = t;
    meta.k = spec.k;
    meta.poses = spec.camera;
    meta.camera_mode = camera_mode;
    write_meta(dir + "/meta.json", meta);
  }

  nlohmann::json manifest = {{"sequences", names},
                             {"seed", seed},
                             {"camera_mode", camera_mode}};
  std::ofstream f(root + "/manifest.json", std::ios::trunc);
  if (!f) throw std::runtime_error("generate_dataset: cannot write manifest");
  f << manifest.dump(2) << "\n";
}

}  // namespace auxtrack

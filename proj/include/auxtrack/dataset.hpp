#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "auxtrack/box.hpp"
#include "auxtrack/core/tensor.hpp"
#include "auxtrack/geometry.hpp"

namespace auxtrack {

// On-disk layout per sequence:
//   frames/%06d.png   8-bit RGB
//   depth/%06d.png    16-bit grayscale, value = round(depth * 256), optional
//   boxes.txt         one line per frame: idx x y w h (pixels)
//   meta.json         frame size, valid set P, intrinsics, poses, camera mode
inline constexpr double kDepthPngScale = 256.0;

namespace detail {

inline std::string frame_name(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", idx);
  return buf;
}

inline const std::vector<int>& png_params() {
  static const std::vector<int> p = {cv::IMWRITE_PNG_COMPRESSION, 3};
  return p;
}

}  // namespace detail

inline void write_image_png(const std::string& path, const Tensor<float>& img) {
  if (img.rank() != 3 || img.dim(2) != 3)
    throw std::invalid_argument("write_image_png: need HxWx3");
  const int h = img.dim(0), w = img.dim(1);
  cv::Mat m(h, w, CV_8UC3);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      auto& px = m.at<cv::Vec3b>(v, u);  // BGR on disk
      for (int c = 0; c < 3; ++c) {
        const double val = std::clamp(static_cast<double>(img.at(v, u, c)), 0.0, 1.0);
        px[2 - c] = static_cast<unsigned char>(std::lround(val * 255.0));
      }
    }
  if (!cv::imwrite(path, m, detail::png_params()))
    throw std::runtime_error("write_image_png: cannot write " + path);
}

inline Tensor<float> read_image_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("read_image_png: cannot read " + path);
  Tensor<float> img({m.rows, m.cols, 3}, TensorRole::Image);
  for (int v = 0; v < m.rows; ++v)
    for (int u = 0; u < m.cols; ++u) {
      const auto& px = m.at<cv::Vec3b>(v, u);
      for (int c = 0; c < 3; ++c)
        img.at(v, u, c) = static_cast<float>(px[2 - c]) / 255.0f;
    }
  return img;
}

inline void write_depth_png(const std::string& path, const Tensor<float>& depth) {
  if (depth.rank() != 2) throw std::invalid_argument("write_depth_png: need HxW");
  const int h = depth.dim(0), w = depth.dim(1);
  cv::Mat m(h, w, CV_16UC1);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const double val = static_cast<double>(depth.at(v, u)) * kDepthPngScale;
      m.at<std::uint16_t>(v, u) =
          static_cast<std::uint16_t>(std::clamp(std::lround(val), 0L, 65535L));
    }
  if (!cv::imwrite(path, m, detail::png_params()))
    throw std::runtime_error("write_depth_png: cannot write " + path);
}

inline Tensor<float> read_depth_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty() || m.type() != CV_16UC1)
    throw std::runtime_error("read_depth_png: cannot read 16-bit " + path);
  Tensor<float> d({m.rows, m.cols}, TensorRole::Depth);
  for (int v = 0; v < m.rows; ++v)
    for (int u = 0; u < m.cols; ++u)
      d.at(v, u) = static_cast<float>(m.at<std::uint16_t>(v, u) / kDepthPngScale);
  return d;
}

struct SequenceMeta {
  int width = 0, height = 0;
  std::vector<int> valid;  // P, sorted frame indices with usable annotations
  Intrinsics k;
  std::vector<Pose6DoF> poses;  // absolute camera-from-world, one per frame
  std::string camera_mode;      // "moving" or "static"
};

namespace detail {

inline nlohmann::json pose_to_json(const Pose6DoF& p) {
  return {p.rotation.x(), p.rotation.y(), p.rotation.z(),
          p.translation.x(), p.translation.y(), p.translation.z()};
}

inline Pose6DoF pose_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 6)
    throw std::runtime_error("meta.json: pose must have 6 entries");
  Pose6DoF p;
  p.rotation = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  p.translation = {j[3].get<double>(), j[4].get<double>(), j[5].get<double>()};
  return p;
}

}  // namespace detail

inline void write_meta(const std::string& path, const SequenceMeta& meta) {
  nlohmann::json poses = nlohmann::json::array();
  for (const auto& p : meta.poses) poses.push_back(detail::pose_to_json(p));
  nlohmann::json j = {
      {"width", meta.width},
      {"height", meta.height},
      {"valid", meta.valid},
      {"camera_mode", meta.camera_mode},
      {"K", {{"focal", meta.k.focal}, {"cx", meta.k.cx}, {"cy", meta.k.cy}}},
      {"poses", poses},
  };
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_meta: cannot write " + path);
  f << j.dump(2) << "\n";
}

inline SequenceMeta read_meta(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_meta: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  SequenceMeta meta;
  meta.width = j.at("width").get<int>();
  meta.height = j.at("height").get<int>();
  meta.valid = j.at("valid").get<std::vector<int>>();
  meta.camera_mode = j.at("camera_mode").get<std::string>();
  meta.k.focal = j.at("K").at("focal").get<double>();
  meta.k.cx = j.at("K").at("cx").get<double>();
  meta.k.cy = j.at("K").at("cy").get<double>();
  meta.k.width = meta.width;
  meta.k.height = meta.height;
  for (const auto& p : j.at("poses")) meta.poses.push_back(detail::pose_from_json(p));
  return meta;
}

inline void write_boxes(const std::string& path, const std::vector<Box>& boxes) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_boxes: cannot write " + path);
  char line[160];
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu %.17g %.17g %.17g %.17g\n", i,
                  boxes[i].x, boxes[i].y, boxes[i].w, boxes[i].h);
    f << line;
  }
}

inline std::vector<Box> read_boxes(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_boxes: cannot open " + path);
  std::vector<Box> boxes;
  std::size_t idx;
  Box b;
  while (f >> idx >> b.x >> b.y >> b.w >> b.h) {
    if (idx != boxes.size()) throw std::runtime_error("read_boxes: index gap");
    boxes.push_back(b);
  }
  return boxes;
}

// A sequence directory with lazily-read frames.
struct Sequence {
  std::string root;
  SequenceMeta meta;
  std::vector<Box> boxes;

  int n_frames() const { return static_cast<int>(boxes.size()); }

  std::string frame_path(int t) const {
    return root + "/frames/" + detail::frame_name(t);
  }
  std::string depth_path(int t) const {
    return root + "/depth/" + detail::frame_name(t);
  }

  Tensor<float> frame(int t) const { return read_image_png(frame_path(t)); }

  bool has_depth() const {
    return std::filesystem::exists(root + "/depth");
  }
  std::optional<Tensor<float>> depth(int t) const {
    if (!std::filesystem::exists(depth_path(t))) return std::nullopt;
    return read_depth_png(depth_path(t));
  }
};

inline Sequence load_sequence(const std::string& dir) {
  Sequence s;
  s.root = dir;
  s.meta = read_meta(dir + "/meta.json");
  s.boxes = read_boxes(dir + "/boxes.txt");
  if (!s.meta.poses.empty() &&
      s.meta.poses.size() != s.boxes.size())
    throw std::runtime_error("load_sequence: pose/box count mismatch in " + dir);
  return s;
}

// Dataset root holds a manifest naming its sequences.
inline std::vector<std::string> list_sequences(const std::string& root) {
  std::ifstream f(root + "/manifest.json");
  if (!f) throw std::runtime_error("list_sequences: no manifest in " + root);
  nlohmann::json j = nlohmann::json::parse(f);
  std::vector<std::string> out;
  for (const auto& name : j.at("sequences"))
    out.push_back(root + "/" + name.get<std::string>());
  return out;
}

}  // namespace auxtrack

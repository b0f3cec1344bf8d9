#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "auxtrack/model.hpp"
#include "auxtrack/strategy.hpp"

namespace auxtrack {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian float32");

inline constexpr const char* kCheckpointFormat = "auxtrack-checkpoint-v1";

struct CheckpointMeta {
  ArchConfig arch;
  Strategy strategy = Strategy::TRACK_ONLY_LARGE;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
};

struct LoadedCheckpoint {
  CheckpointMeta meta;
  ParamStore<float> params;
  ParamStore<float> opt_state;  // empty unless saved with optimizer state
  bool has_opt = false;
};

namespace detail {

inline nlohmann::json arch_to_json(const ArchConfig& a) {
  return {{"input_side", a.input_side},
          {"template_side", a.template_side},
          {"stage_channels", a.stage_channels},
          {"num_stages", a.num_stages},
          {"num_heads", a.num_heads},
          {"corner_width", a.corner_width},
          {"pose_width", a.pose_width},
          {"depth_bias_init", a.depth_bias_init}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.input_side = j.at("input_side").get<int>();
  a.template_side = j.at("template_side").get<int>();
  auto sc = j.at("stage_channels").get<std::vector<int>>();
  if (sc.size() != 4) throw std::runtime_error("checkpoint: bad stage_channels");
  std::copy(sc.begin(), sc.end(), a.stage_channels.begin());
  a.num_stages = j.at("num_stages").get<int>();
  a.num_heads = j.at("num_heads").get<int>();
  a.corner_width = j.at("corner_width").get<int>();
  a.pose_width = j.at("pose_width").get<int>();
  a.depth_bias_init = j.at("depth_bias_init").get<double>();
  a.validate();
  return a;
}

inline nlohmann::json store_to_json(const ParamStore<float>& store,
                                    std::uint64_t& offset) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : store.entries()) {
    arr.push_back({{"name", e.name},
                   {"group", e.group},
                   {"shape", e.value.shape()},
                   {"offset", offset},
                   {"count", e.value.size()}});
    offset += e.value.size();
  }
  return arr;
}

inline void append_store(std::ofstream& blob, const ParamStore<float>& store) {
  for (const auto& e : store.entries())
    blob.write(reinterpret_cast<const char*>(e.value.data()),
               static_cast<std::streamsize>(e.value.size() * sizeof(float)));
}

inline ParamStore<float> store_from_json(const nlohmann::json& arr,
                                         const std::vector<float>& data) {
  ParamStore<float> store;
  for (const auto& t : arr) {
    auto shape = t.at("shape").get<std::vector<int>>();
    auto offset = t.at("offset").get<std::uint64_t>();
    auto count = t.at("count").get<std::uint64_t>();
    Tensor<float> v(shape, TensorRole::Params);
    if (v.size() != count) throw std::runtime_error("checkpoint: count mismatch");
    if (offset + count > data.size())
      throw std::runtime_error("checkpoint: blob too small");
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(offset),
              data.begin() + static_cast<std::ptrdiff_t>(offset + count),
              v.data());
    store.add(t.at("group").get<std::string>(), t.at("name").get<std::string>(),
              std::move(v));
  }
  return store;
}

}  // namespace detail

// Writes <prefix>.json (manifest) and <prefix>.blob (raw float32 values in
// manifest order). Optimizer state rides along for bit-exact resume.
inline void save_checkpoint(const std::string& prefix, const CheckpointMeta& meta,
                            const ParamStore<float>& params,
                            const ParamStore<float>* opt_state = nullptr) {
  std::uint64_t offset = 0;
  nlohmann::json manifest = {
      {"format", kCheckpointFormat},
      {"dtype", "f32"},
      {"arch", detail::arch_to_json(meta.arch)},
      {"strategy", strategy_name(meta.strategy)},
      {"seed", meta.seed},
      {"step", meta.step},
      {"tensors", detail::store_to_json(params, offset)},
  };
  if (opt_state)
    manifest["opt_tensors"] = detail::store_to_json(*opt_state, offset);

  std::ofstream blob(prefix + ".blob", std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("checkpoint: cannot write " + prefix + ".blob");
  detail::append_store(blob, params);
  if (opt_state) detail::append_store(blob, *opt_state);
  blob.flush();
  if (!blob) throw std::runtime_error("checkpoint: blob write failed");

  std::ofstream mf(prefix + ".json", std::ios::trunc);
  if (!mf) throw std::runtime_error("checkpoint: cannot write " + prefix + ".json");
  mf << manifest.dump(2) << "\n";
  mf.flush();
  if (!mf) throw std::runtime_error("checkpoint: manifest write failed");
}

inline LoadedCheckpoint load_checkpoint(const std::string& prefix) {
  std::ifstream mf(prefix + ".json");
  if (!mf) throw std::runtime_error("checkpoint: cannot open " + prefix + ".json");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.at("format").get<std::string>() != kCheckpointFormat)
    throw std::runtime_error("checkpoint: unknown format tag");

  std::ifstream blob(prefix + ".blob", std::ios::binary | std::ios::ate);
  if (!blob) throw std::runtime_error("checkpoint: cannot open " + prefix + ".blob");
  auto bytes = static_cast<std::uint64_t>(blob.tellg());
  if (bytes % sizeof(float) != 0)
    throw std::runtime_error("checkpoint: blob size not a float multiple");
  std::vector<float> data(bytes / sizeof(float));
  blob.seekg(0);
  blob.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(bytes));
  if (!blob) throw std::runtime_error("checkpoint: blob read failed");

  LoadedCheckpoint out;
  out.meta.arch = detail::arch_from_json(manifest.at("arch"));
  out.meta.strategy = strategy_from_name(manifest.at("strategy").get<std::string>());
  out.meta.seed = manifest.at("seed").get<std::uint64_t>();
  out.meta.step = manifest.at("step").get<std::int64_t>();
  out.params = detail::store_from_json(manifest.at("tensors"), data);
  if (manifest.contains("opt_tensors")) {
    out.opt_state = detail::store_from_json(manifest.at("opt_tensors"), data);
    out.has_opt = true;
  }
  return out;
}

}  // namespace auxtrack

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "auxtrack/box.hpp"
#include "auxtrack/core/nn_ops.hpp"
#include "auxtrack/core/rng.hpp"
#include "auxtrack/strategy.hpp"

namespace auxtrack {

// Soft-argmax corners can coincide under an untrained head; box sides are
// clamped to this floor to keep w, h strictly positive.
inline constexpr double kMinBoxSide = 1e-3;

struct ArchConfig {
  int input_side = 256;     // search crop side
  int template_side = 128;  // template crop side
  std::array<int, 4> stage_channels{8, 16, 24, 32};
  int num_stages = 3;   // attention stages on the joint token sequence
  int num_heads = 2;
  int corner_width = 32;  // corner head hidden channels
  int pose_width = 16;    // pose net conv channels
  double depth_bias_init = -3.5;  // sigmoid bias, puts initial depth near 3

  static constexpr int kPatchStride = 16;  // four stride-2 convolutions

  int search_token_side() const { return input_side / kPatchStride; }
  int template_token_side() const { return template_side / kPatchStride; }
  int embed_dim() const { return stage_channels[3]; }

  void validate() const {
    if (input_side % kPatchStride != 0 || template_side % kPatchStride != 0)
      throw std::invalid_argument("ArchConfig: sides must be divisible by 16");
    if (input_side < kPatchStride || template_side < kPatchStride)
      throw std::invalid_argument("ArchConfig: sides too small");
    for (int c : stage_channels)
      if (c <= 0) throw std::invalid_argument("ArchConfig: nonpositive channels");
    if (num_stages <= 0 || num_heads <= 0 || corner_width <= 0 || pose_width <= 0)
      throw std::invalid_argument("ArchConfig: nonpositive size field");
    if (stage_channels[3] % num_heads != 0)
      throw std::invalid_argument("ArchConfig: embed dim not divisible by heads");
  }

  // Architecture small enough for finite-difference sweeps.
  static ArchConfig tiny() {
    ArchConfig c;
    c.input_side = 32;
    c.template_side = 16;
    c.stage_channels = {2, 3, 4, 6};
    c.num_stages = 2;
    c.num_heads = 2;
    c.corner_width = 6;
    c.pose_width = 4;
    return c;
  }
};

inline const std::vector<std::string>& param_groups() {
  static const std::vector<std::string> g = {"patch_embed",   "encoder",
                                             "decoder",       "tracking_head",
                                             "depth_head",    "pose_net"};
  return g;
}

// Named parameter tensors partitioned into component groups. Entry order is
// creation order and is the canonical serialization order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::string group;
    Tensor<T> value;
  };

  Tensor<T>& add(const std::string& group, const std::string& name,
                 Tensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate param " + name);
    index_[name] = static_cast<int>(entries_.size());
    entries_.push_back({name, group, std::move(value)});
    return entries_.back().value;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no param " + name);
    return entries_[static_cast<std::size_t>(it->second)].value;
  }
  const Tensor<T>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  std::size_t param_count(const std::string& group = "") const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (group.empty() || e.group == group) n += e.value.size();
    return n;
  }

  // Drops whole groups; used by export_inference.
  ParamStore without_groups(const std::vector<std::string>& groups) const {
    ParamStore out;
    for (const auto& e : entries_) {
      bool drop = false;
      for (const auto& g : groups) drop = drop || e.group == g;
      if (!drop) out.add(e.group, e.name, e.value);
    }
    return out;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_)
      out.add(e.group, e.name, e.value.template cast<U>());
    return out;
  }

  bool finite() const {
    for (const auto& e : entries_)
      for (std::size_t i = 0; i < e.value.size(); ++i)
        if (!std::isfinite(static_cast<double>(e.value[i]))) return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

namespace detail {

template <typename T>
Tensor<T> he_conv(Rng& rng, int kh, int kw, int cin, int cout) {
  Tensor<T> w({kh, kw, cin, cout}, TensorRole::Params);
  double std = std::sqrt(2.0 / (kh * kw * cin));
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<T>(rng.normal(0.0, std));
  return w;
}

template <typename T>
Tensor<T> he_linear(Rng& rng, int in, int out) {
  Tensor<T> w({in, out}, TensorRole::Params);
  double std = std::sqrt(2.0 / in);
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<T>(rng.normal(0.0, std));
  return w;
}

template <typename T>
Tensor<T> small_normal(Rng& rng, std::vector<int> shape, double std) {
  Tensor<T> t(std::move(shape), TensorRole::Params);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.normal(0.0, std));
  return t;
}

template <typename T>
Tensor<T> zeros(std::vector<int> shape) {
  return Tensor<T>(std::move(shape), TensorRole::Params);
}

}  // namespace detail

// Deterministic initialization: He-normal convolutions and linears, zero
// biases, unit layer-norm gains, N(0, 0.02) positional embeddings, the depth
// output bias from the config, and a zeroed pose head (identity pose at init).
template <typename T>
ParamStore<T> init_params(const ArchConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<T> p;
  Rng rng(mix64(seed));
  const auto& ch = cfg.stage_channels;
  const int dim = cfg.embed_dim();

  int cin = 3;
  for (int i = 0; i < 4; ++i) {
    p.add("patch_embed", "pe.conv" + std::to_string(i) + ".w",
          detail::he_conv<T>(rng, 3, 3, cin, ch[static_cast<std::size_t>(i)]));
    p.add("patch_embed", "pe.conv" + std::to_string(i) + ".b",
          detail::zeros<T>({ch[static_cast<std::size_t>(i)]}));
    cin = ch[static_cast<std::size_t>(i)];
  }

  const int ns = cfg.search_token_side() * cfg.search_token_side();
  const int nt = cfg.template_token_side() * cfg.template_token_side();
  p.add("encoder", "enc.pos_search", detail::small_normal<T>(rng, {ns, dim}, 0.02));
  p.add("encoder", "enc.pos_template",
        detail::small_normal<T>(rng, {nt, dim}, 0.02));
  for (int s = 0; s < cfg.num_stages; ++s) {
    std::string base = "enc.stage" + std::to_string(s) + ".";
    p.add("encoder", base + "ln1.g", Tensor<T>::full({dim}, T(1)));
    p.add("encoder", base + "ln1.b", detail::zeros<T>({dim}));
    for (const char* nm : {"q", "k", "v", "o"}) {
      p.add("encoder", base + nm + ".w", detail::he_linear<T>(rng, dim, dim));
      p.add("encoder", base + nm + ".b", detail::zeros<T>({dim}));
    }
    p.add("encoder", base + "ln2.g", Tensor<T>::full({dim}, T(1)));
    p.add("encoder", base + "ln2.b", detail::zeros<T>({dim}));
    p.add("encoder", base + "mlp.w1", detail::he_linear<T>(rng, dim, 2 * dim));
    p.add("encoder", base + "mlp.b1", detail::zeros<T>({2 * dim}));
    p.add("encoder", base + "mlp.w2", detail::he_linear<T>(rng, 2 * dim, dim));
    p.add("encoder", base + "mlp.b2", detail::zeros<T>({dim}));
  }

  p.add("decoder", "dec.conv3.w", detail::he_conv<T>(rng, 3, 3, ch[3], ch[3]));
  p.add("decoder", "dec.conv3.b", detail::zeros<T>({ch[3]}));
  p.add("decoder", "dec.conv2.w",
        detail::he_conv<T>(rng, 3, 3, ch[3] + ch[2], ch[2]));
  p.add("decoder", "dec.conv2.b", detail::zeros<T>({ch[2]}));
  p.add("decoder", "dec.conv1.w",
        detail::he_conv<T>(rng, 3, 3, ch[2] + ch[1], ch[1]));
  p.add("decoder", "dec.conv1.b", detail::zeros<T>({ch[1]}));
  p.add("decoder", "dec.conv0.w",
        detail::he_conv<T>(rng, 3, 3, ch[1] + ch[0], ch[0]));
  p.add("decoder", "dec.conv0.b", detail::zeros<T>({ch[0]}));

  p.add("tracking_head", "tk.corner1.w",
        detail::he_conv<T>(rng, 3, 3, ch[3] + 1, cfg.corner_width));
  p.add("tracking_head", "tk.corner1.b", detail::zeros<T>({cfg.corner_width}));
  p.add("tracking_head", "tk.corner2.w",
        detail::he_conv<T>(rng, 1, 1, cfg.corner_width, 2));
  p.add("tracking_head", "tk.corner2.b", detail::zeros<T>({2}));

  for (int omega = 3; omega >= 0; --omega) {
    std::string base = "dh.s" + std::to_string(omega) + ".";
    int c = ch[static_cast<std::size_t>(omega)];
    p.add("depth_head", base + "conv.w", detail::he_conv<T>(rng, 3, 3, c, c));
    p.add("depth_head", base + "conv.b", detail::zeros<T>({c}));
    p.add("depth_head", base + "out.w", detail::he_conv<T>(rng, 1, 1, c, 1));
    p.add("depth_head", base + "out.b",
          Tensor<T>::full({1}, static_cast<T>(cfg.depth_bias_init)));
  }

  int pc = 6;
  for (int i = 0; i < 5; ++i) {
    p.add("pose_net", "pn.conv" + std::to_string(i) + ".w",
          detail::he_conv<T>(rng, 3, 3, pc, cfg.pose_width));
    p.add("pose_net", "pn.conv" + std::to_string(i) + ".b",
          detail::zeros<T>({cfg.pose_width}));
    pc = cfg.pose_width;
  }
  p.add("pose_net", "pn.fc.w", detail::zeros<T>({cfg.pose_width, 6}));
  p.add("pose_net", "pn.fc.b", detail::zeros<T>({6}));
  return p;
}

// Parameters lifted onto a tape. Groups listed in trainable get gradients.
template <typename T>
struct ParamVars {
  std::unordered_map<std::string, ad::Var<T>> by_name;

  ad::Var<T> at(const std::string& name) const {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::out_of_range("no param var " + name);
    return it->second;
  }
};

template <typename T>
ParamVars<T> leaf_params(ad::Graph<T>& g, const ParamStore<T>& store,
                         const std::vector<std::string>& trainable) {
  ParamVars<T> out;
  for (const auto& e : store.entries()) {
    bool train = false;
    for (const auto& name : trainable) train = train || e.group == name;
    out.by_name.emplace(e.name, ad::leaf(g, e.value, train));
  }
  return out;
}

// Plain-tensor tracking result (graph-free callers).
struct TrackOutput {
  Box box;                    // normalized (x, y, w, h) in [0,1]
  Tensor<double> attn_map;    // search-token grid, sums to 1
  Tensor<double> tl_heat, br_heat;
};

template <typename T>
struct TrackVars {
  ad::Var<T> box;   // (4,)
  ad::Var<T> attn;  // (S, S, 1)
  ad::Var<T> tl_heat, br_heat;  // (S, S, 1), each sums to 1
};

template <typename T>
struct Features {
  ad::Var<T> stage3_search;    // (S, S, C3) search tokens after attention
  std::array<ad::Var<T>, 4> phi;  // decoder maps, index = omega (3 coarsest)
};

template <typename T>
struct ModelInput {
  Tensor<T> search;  // input_side^2 x 3
  Tensor<T> tmpl;    // template_side^2 x 3
};

template <typename T>
struct ForwardOut {
  TrackVars<T> track;
  std::vector<ad::Var<T>> disp;              // 4 scales, or empty
  std::optional<ad::Var<T>> pose_prev, pose_next;
};

namespace detail {

template <typename T>
struct PatchLevels {
  std::array<ad::Var<T>, 4> level;  // stride 2,4,8,16 feature maps
};

template <typename T>
PatchLevels<T> patch_embed_levels(const ArchConfig& cfg, ad::Graph<T>& g,
                                  const ParamVars<T>& pv, ad::Var<T> img) {
  (void)g;
  if (img.shape()[0] % ArchConfig::kPatchStride != 0 ||
      img.shape()[1] % ArchConfig::kPatchStride != 0)
    throw std::invalid_argument("patch_embed: side not divisible by 16");
  PatchLevels<T> out;
  ad::Var<T> x = img;
  for (int i = 0; i < 4; ++i) {
    x = ad::gelu(ad::conv2d(x, pv.at("pe.conv" + std::to_string(i) + ".w"),
                            pv.at("pe.conv" + std::to_string(i) + ".b"), 2, 1));
    out.level[static_cast<std::size_t>(i)] = x;
  }
  return out;
}

// One pre-norm attention stage over the joint (search + template) sequence.
template <typename T>
ad::Var<T> attention_stage(const ArchConfig& cfg, const ParamVars<T>& pv,
                           const std::string& base, ad::Var<T> x) {
  const int dim = cfg.embed_dim();
  const int hd = dim / cfg.num_heads;
  auto xn = ad::layer_norm(x, pv.at(base + "ln1.g"), pv.at(base + "ln1.b"));
  auto q = ad::linear(xn, pv.at(base + "q.w"), pv.at(base + "q.b"));
  auto k = ad::linear(xn, pv.at(base + "k.w"), pv.at(base + "k.b"));
  auto v = ad::linear(xn, pv.at(base + "v.w"), pv.at(base + "v.b"));
  ad::Var<T> merged = x;  // placeholder, reassigned below
  for (int h = 0; h < cfg.num_heads; ++h) {
    auto qh = ad::slice_lastdim(q, h * hd, hd);
    auto kh = ad::slice_lastdim(k, h * hd, hd);
    auto vh = ad::slice_lastdim(v, h * hd, hd);
    auto scores = ad::mul_const(ad::matmul_nt(qh, kh),
                                static_cast<T>(1.0 / std::sqrt(double(hd))));
    auto oh = ad::matmul(ad::softmax_rows(scores), vh);
    merged = h == 0 ? oh : ad::concat_lastdim(merged, oh);
  }
  auto attn_out = ad::linear(merged, pv.at(base + "o.w"), pv.at(base + "o.b"));
  x = ad::add(x, attn_out);
  auto xn2 = ad::layer_norm(x, pv.at(base + "ln2.g"), pv.at(base + "ln2.b"));
  auto hmid = ad::gelu(ad::linear(xn2, pv.at(base + "mlp.w1"), pv.at(base + "mlp.b1")));
  auto mlp_out = ad::linear(hmid, pv.at(base + "mlp.w2"), pv.at(base + "mlp.b2"));
  return ad::add(x, mlp_out);
}

// Softmax over all spatial positions of an (S, S, 1) map.
template <typename T>
ad::Var<T> spatial_softmax(ad::Var<T> m) {
  const int h = m.shape()[0], w = m.shape()[1];
  auto flat = ad::reshape(m, {1, h * w});
  return ad::reshape(ad::softmax_rows(flat), {h, w, 1});
}

// Expected (x, y) of a spatial probability map, in normalized [0,1] coords
// at cell centers.
template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> soft_argmax(ad::Var<T> heat) {
  const int s = heat.shape()[0];
  Tensor<T> xs({s, s, 1}), ys({s, s, 1});
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      xs.at(i, j, 0) = static_cast<T>((j + 0.5) / s);
      ys.at(i, j, 0) = static_cast<T>((i + 0.5) / s);
    }
  return {ad::weighted_sum(heat, xs), ad::weighted_sum(heat, ys)};
}

}  // namespace detail

// The shared extractor plus both heads. Templated on scalar type so the FD
// suite can run the whole model in double precision.
template <typename T>
class Model {
 public:
  Model(ArchConfig cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed), store_(init_params<T>(cfg, seed)) {}
  Model(ArchConfig cfg, ParamStore<T> store, std::uint64_t seed = 0)
      : cfg_(cfg), seed_(seed), store_(std::move(store)) {
    cfg_.validate();
  }

  const ArchConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  // Incremented by extract_features; the one-pass-sharing invariant checks it.
  mutable int extract_calls = 0;

  // Unified feature extractor E: patch embedding of both crops, joint
  // attention over the concatenated token sequence, then a search-only
  // decoder with skip connections from the search patch-embed levels.
  Features<T> extract_features(ad::Graph<T>& g, const ParamVars<T>& pv,
                               ad::Var<T> search, ad::Var<T> tmpl) const {
    ++extract_calls;
    const auto& ch = cfg_.stage_channels;
    const int ss = cfg_.search_token_side();
    const int ts = cfg_.template_token_side();
    const int dim = cfg_.embed_dim();

    auto s_levels = detail::patch_embed_levels(cfg_, g, pv, search);
    auto t_levels = detail::patch_embed_levels(cfg_, g, pv, tmpl);

    auto s_tok = ad::add(ad::reshape(s_levels.level[3], {ss * ss, dim}),
                         pv.at("enc.pos_search"));
    auto t_tok = ad::add(ad::reshape(t_levels.level[3], {ts * ts, dim}),
                         pv.at("enc.pos_template"));
    auto x = ad::concat_rows(s_tok, t_tok);
    for (int s = 0; s < cfg_.num_stages; ++s)
      x = detail::attention_stage(cfg_, pv, "enc.stage" + std::to_string(s) + ".", x);
    auto stage3_search =
        ad::reshape(ad::slice_rows(x, 0, ss * ss), {ss, ss, dim});

    Features<T> f{stage3_search, {}};
    auto d3 = ad::gelu(ad::conv2d(stage3_search, pv.at("dec.conv3.w"),
                                  pv.at("dec.conv3.b"), 1, 1));
    f.phi[3] = d3;
    auto d2 = ad::gelu(ad::conv2d(
        ad::concat_lastdim(ad::upsample_bilinear(d3, 2 * ss, 2 * ss),
                           s_levels.level[2]),
        pv.at("dec.conv2.w"), pv.at("dec.conv2.b"), 1, 1));
    f.phi[2] = d2;
    auto d1 = ad::gelu(ad::conv2d(
        ad::concat_lastdim(ad::upsample_bilinear(d2, 4 * ss, 4 * ss),
                           s_levels.level[1]),
        pv.at("dec.conv1.w"), pv.at("dec.conv1.b"), 1, 1));
    f.phi[1] = d1;
    auto d0 = ad::gelu(ad::conv2d(
        ad::concat_lastdim(ad::upsample_bilinear(d1, 8 * ss, 8 * ss),
                           s_levels.level[0]),
        pv.at("dec.conv0.w"), pv.at("dec.conv0.b"), 1, 1));
    f.phi[0] = d0;
    (void)ch;
    return f;
  }

  // Attention map from stage-3 search tokens against the decoder output,
  // then a corner head: two spatially-normalized heatmaps whose soft-argmax
  // expectations give the box corners.
  TrackVars<T> tracking_head(ad::Graph<T>& g, const ParamVars<T>& pv,
                             const Features<T>& f) const {
    const int dim = cfg_.embed_dim();
    auto logits = ad::mul_const(ad::mean_channels(ad::mul(f.stage3_search, f.phi[3])),
                                static_cast<T>(std::sqrt(double(dim))));
    auto attn = detail::spatial_softmax(logits);

    auto cat = ad::concat_lastdim(f.phi[3], attn);
    auto hidden = ad::gelu(
        ad::conv2d(cat, pv.at("tk.corner1.w"), pv.at("tk.corner1.b"), 1, 1));
    auto maps =
        ad::conv2d(hidden, pv.at("tk.corner2.w"), pv.at("tk.corner2.b"), 1, 0);
    auto tl = detail::spatial_softmax(ad::slice_lastdim(maps, 0, 1));
    auto br = detail::spatial_softmax(ad::slice_lastdim(maps, 1, 1));

    auto [tlx, tly] = detail::soft_argmax(tl);
    auto [brx, bry] = detail::soft_argmax(br);
    auto w = ad::vmax_const(ad::sub(brx, tlx), static_cast<T>(kMinBoxSide));
    auto h = ad::vmax_const(ad::sub(bry, tly), static_cast<T>(kMinBoxSide));
    auto box = ad::stack_scalars(g, {tlx, tly, w, h});
    return {box, attn, tl, br};
  }

  // Four sigmoid disparity maps at sides input/8, input/4, input/2, input.
  std::vector<ad::Var<T>> depth_head(ad::Graph<T>& g, const ParamVars<T>& pv,
                                     const Features<T>& f) const {
    (void)g;
    std::vector<ad::Var<T>> out;  // index omega = 3 first, caller reorders
    for (int omega = 3; omega >= 0; --omega) {
      std::string base = "dh.s" + std::to_string(omega) + ".";
      auto phi = f.phi[static_cast<std::size_t>(omega)];
      auto up = ad::upsample_bilinear(phi, 2 * phi.shape()[0], 2 * phi.shape()[1]);
      auto hidden =
          ad::gelu(ad::conv2d(up, pv.at(base + "conv.w"), pv.at(base + "conv.b"), 1, 1));
      auto disp = ad::sigmoid(
          ad::conv2d(hidden, pv.at(base + "out.w"), pv.at(base + "out.b"), 1, 0));
      out.push_back(disp);
    }
    std::reverse(out.begin(), out.end());  // out[omega] side = input_side / 2^omega
    return out;
  }

  // Relative 6-DoF pose from a stacked crop pair: five stride-2 convolutions,
  // global average pooling, and a zero-initialized linear layer scaled by
  // 0.01, so the initial pose is exactly the identity.
  ad::Var<T> pose_net(ad::Graph<T>& g, const ParamVars<T>& pv, ad::Var<T> from,
                      ad::Var<T> to) const {
    (void)g;
    if (from.shape() != to.shape())
      throw std::invalid_argument("pose_net: crop shape mismatch");
    auto x = ad::concat_lastdim(from, to);
    for (int i = 0; i < 5; ++i)
      x = ad::gelu(ad::conv2d(x, pv.at("pn.conv" + std::to_string(i) + ".w"),
                              pv.at("pn.conv" + std::to_string(i) + ".b"), 2, 1));
    auto pooled = ad::reshape(ad::mean_hw(x), {1, cfg_.pose_width});
    auto out = ad::linear(pooled, pv.at("pn.fc.w"), pv.at("pn.fc.b"));
    return ad::reshape(ad::mul_const(out, T(0.01)), {6});
  }

  // Eq.-3-style dispatch: one extractor pass, heads by strategy. Source crops
  // for the pose net are required exactly when the strategy is SELFSUP_AUX.
  ForwardOut<T> forward_full(ad::Graph<T>& g, const ParamVars<T>& pv,
                             const ModelInput<T>& in, Strategy strategy,
                             const Tensor<T>* prev_search = nullptr,
                             const Tensor<T>* next_search = nullptr) const {
    auto search = ad::constant(g, in.search);
    auto tmpl = ad::constant(g, in.tmpl);
    auto feats = extract_features(g, pv, search, tmpl);
    ForwardOut<T> out{tracking_head(g, pv, feats), {}, {}, {}};
    if (uses_depth_head(strategy)) out.disp = depth_head(g, pv, feats);
    if (uses_pose_net(strategy)) {
      if (!prev_search || !next_search)
        throw std::invalid_argument("forward_full: selfsup needs source crops");
      out.pose_prev = pose_net(g, pv, search, ad::constant(g, *prev_search));
      out.pose_next = pose_net(g, pv, search, ad::constant(g, *next_search));
    }
    return out;
  }

  // Tape-free convenience for inference and evaluation.
  TrackOutput track_inference(const ModelInput<T>& in) const {
    ad::Graph<T> g;
    auto pv = leaf_params(g, store_, {});
    auto out = forward_full(g, pv, in, Strategy::TRACK_ONLY_LARGE);
    TrackOutput r;
    const auto& b = out.track.box.value();
    r.box = {static_cast<double>(b[0]), static_cast<double>(b[1]),
             static_cast<double>(b[2]), static_cast<double>(b[3])};
    const int s = cfg_.search_token_side();
    r.attn_map = Tensor<double>({s, s});
    r.tl_heat = Tensor<double>({s, s});
    r.br_heat = Tensor<double>({s, s});
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s; ++j) {
        r.attn_map.at(i, j) = static_cast<double>(out.track.attn.value().at(i, j, 0));
        r.tl_heat.at(i, j) = static_cast<double>(out.track.tl_heat.value().at(i, j, 0));
        r.br_heat.at(i, j) = static_cast<double>(out.track.br_heat.value().at(i, j, 0));
      }
    return r;
  }

  // Drops the auxiliary groups; tracking outputs are bit-identical.
  Model export_inference() const {
    return Model(cfg_, store_.without_groups({"depth_head", "pose_net"}), seed_);
  }

 private:
  ArchConfig cfg_;
  std::uint64_t seed_ = 0;
  ParamStore<T> store_;
};

}  // namespace auxtrack

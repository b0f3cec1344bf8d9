#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "auxtrack/checkpoint.hpp"
#include "auxtrack/geometry.hpp"
#include "auxtrack/losses.hpp"
#include "auxtrack/model.hpp"
#include "test_util.hpp"

using namespace auxtrack;

namespace {

double rel_err(double fd, double an) {
  double denom = std::max(std::abs(fd), std::abs(an));
  if (denom < 1e-10) return std::abs(fd - an) < 1e-8 ? 0.0 : 1.0;
  return std::abs(fd - an) / denom;
}

template <typename T>
ModelInput<T> random_input(const ArchConfig& cfg, std::uint64_t seed) {
  Rng rng(mix64(seed));
  ModelInput<T> in;
  in.search = testutil::random_image<T>(rng, cfg.input_side, cfg.input_side);
  in.tmpl = testutil::random_image<T>(rng, cfg.template_side, cfg.template_side);
  return in;
}

template <typename T>
double sum_var(const ad::Var<T>& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.value().size(); ++i)
    s += static_cast<double>(v.value()[i]);
  return s;
}

}  // namespace

TEST_CASE("arch config validation") {
  ArchConfig bad;
  bad.input_side = 250;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ArchConfig{};
  bad.template_side = 100;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ArchConfig{};
  bad.num_heads = 5;  // 32 % 5 != 0
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  REQUIRE_NOTHROW(ArchConfig{}.validate());
  REQUIRE_NOTHROW(ArchConfig::tiny().validate());
}

TEST_CASE("parameter store partitions, counts, and finiteness") {
  auto cfg = ArchConfig{};
  auto store = init_params<float>(cfg, 7);
  REQUIRE(store.finite());

  std::size_t total = store.param_count();
  std::size_t by_groups = 0;
  for (const auto& gname : param_groups()) by_groups += store.param_count(gname);
  REQUIRE(by_groups == total);
  REQUIRE(store.param_count("no_such_group") == 0);

  for (const auto& e : store.entries()) {
    bool known = false;
    for (const auto& gname : param_groups()) known = known || e.group == gname;
    REQUIRE(known);
  }

  // Counts depend on the architecture, not on the sampled values.
  auto store2 = init_params<float>(cfg, 12345);
  REQUIRE(store2.param_count() == total);
  for (const auto& gname : param_groups())
    REQUIRE(store2.param_count(gname) == store.param_count(gname));

  // The FD config stays under the sweep budget.
  auto tiny = init_params<double>(ArchConfig::tiny(), 3);
  INFO("tiny param count " << tiny.param_count());
  REQUIRE(tiny.param_count() < 5000);
  REQUIRE(tiny.param_count() > 500);
}

TEST_CASE("patch embedding downsamples by 16 and is linear at zero") {
  ArchConfig cfg;
  auto store = init_params<float>(cfg, 11);
  ad::Graph<float> g;
  auto pv = leaf_params(g, store, {});

  auto search = ad::constant(
      g, Tensor<float>({cfg.input_side, cfg.input_side, 3}, TensorRole::Image));
  auto levels = detail::patch_embed_levels(cfg, g, pv, search);
  REQUIRE(levels.level[3].shape() == std::vector<int>{16, 16, 32});

  auto tmpl = ad::constant(
      g, Tensor<float>({cfg.template_side, cfg.template_side, 3}, TensorRole::Image));
  auto tlevels = detail::patch_embed_levels(cfg, g, pv, tmpl);
  REQUIRE(tlevels.level[3].shape() == std::vector<int>{8, 8, 32});

  // Zero image with zero biases stays exactly zero through every level.
  for (const auto& lvl : levels.level)
    for (std::size_t i = 0; i < lvl.value().size(); ++i)
      REQUIRE(lvl.value()[i] == 0.0f);

  auto odd = ad::constant(g, Tensor<float>({40, 40, 3}, TensorRole::Image));
  REQUIRE_THROWS_AS(detail::patch_embed_levels(cfg, g, pv, odd),
                    std::invalid_argument);
}

TEST_CASE("full-size forward: scale lists, heatmap normalization, box sanity") {
  ArchConfig cfg;
  Model<float> model(cfg, 21);
  auto in = random_input<float>(cfg, 22);

  ad::Graph<float> g;
  auto pv = leaf_params(g, model.params(), {});
  auto out = model.forward_full(g, pv, in, Strategy::SUPERVISED_AUX);

  REQUIRE(out.disp.size() == 4);
  std::vector<int> sides;
  for (const auto& d : out.disp) {
    REQUIRE(d.shape()[2] == 1);
    REQUIRE(d.shape()[0] == d.shape()[1]);
    sides.push_back(d.shape()[0]);
    for (std::size_t i = 0; i < d.value().size(); ++i) {
      REQUIRE(d.value()[i] > 0.0f);
      REQUIRE(d.value()[i] < 1.0f);
    }
  }
  REQUIRE(sides == std::vector<int>{256, 128, 64, 32});

  for (const auto* heat : {&out.track.tl_heat, &out.track.br_heat, &out.track.attn}) {
    REQUIRE(heat->shape() == std::vector<int>{16, 16, 1});
    REQUIRE(std::abs(sum_var(*heat) - 1.0) < 1e-6);
    for (std::size_t i = 0; i < heat->value().size(); ++i)
      REQUIRE(heat->value()[i] >= 0.0f);
  }

  const auto& b = out.track.box.value();
  REQUIRE(b.shape() == std::vector<int>{4});
  for (int i = 0; i < 4; ++i) {
    REQUIRE(b[static_cast<std::size_t>(i)] >= 0.0f);
    REQUIRE(b[static_cast<std::size_t>(i)] <= 1.0f);
  }
  REQUIRE(b[2] > 0.0f);
  REQUIRE(b[3] > 0.0f);
}

TEST_CASE("heatmap sums stay normalized across random models") {
  auto cfg = ArchConfig::tiny();
  for (std::uint64_t seed : {31u, 32u, 33u, 34u, 35u}) {
    Model<double> model(cfg, seed);
    auto in = random_input<double>(cfg, seed + 100);
    ad::Graph<double> g;
    auto pv = leaf_params(g, model.params(), {});
    auto out = model.forward_full(g, pv, in, Strategy::TRACK_ONLY_SMALL);
    REQUIRE(std::abs(sum_var(out.track.tl_heat) - 1.0) < 1e-6);
    REQUIRE(std::abs(sum_var(out.track.br_heat) - 1.0) < 1e-6);
    REQUIRE(std::abs(sum_var(out.track.attn) - 1.0) < 1e-6);
    const auto& b = out.track.box.value();
    REQUIRE(b[0] >= 0.0);
    REQUIRE(b[1] >= 0.0);
    REQUIRE(b[0] + b[2] <= 1.0);
    REQUIRE(b[1] + b[3] <= 1.0);
    REQUIRE(b[2] > 0.0);
    REQUIRE(b[3] > 0.0);
  }
}

TEST_CASE("soft-argmax recovers a one-hot cell center exactly") {
  const int s = 8;
  ad::Graph<double> g;

  Tensor<double> onehot({s, s, 1});
  onehot.at(3, 5, 0) = 1.0;
  auto [x, y] = detail::soft_argmax(ad::constant(g, onehot));
  REQUIRE(x.value()[0] == (5 + 0.5) / s);
  REQUIRE(y.value()[0] == (3 + 0.5) / s);

  Tensor<double> uniform = Tensor<double>::full({s, s, 1}, 1.0 / (s * s));
  auto [ux, uy] = detail::soft_argmax(ad::constant(g, uniform));
  REQUIRE(ux.value()[0] == 0.5);
  REQUIRE(uy.value()[0] == 0.5);
}

TEST_CASE("disparity to depth conversion") {
  REQUIRE(disparity_to_depth(1.0) == Catch::Approx(kMinDepth).margin(1e-12));
  REQUIRE(disparity_to_depth(0.0) == Catch::Approx(kMaxDepth).margin(1e-9));
  REQUIRE_THROWS_AS(disparity_to_depth(-0.1), std::invalid_argument);
  REQUIRE_THROWS_AS(disparity_to_depth(1.1), std::invalid_argument);
  REQUIRE_THROWS_AS(depth_to_disparity(0.0), std::invalid_argument);

  double prev = disparity_to_depth(0.0);
  for (int i = 1; i <= 100; ++i) {
    double d = disparity_to_depth(i / 100.0);
    REQUIRE(d < prev);
    prev = d;
  }

  Rng rng(41);
  for (int i = 0; i < 200; ++i) {
    double depth = rng.uniform(kMinDepth, kMaxDepth);
    double rt = disparity_to_depth(depth_to_disparity(depth));
    REQUIRE(std::abs(rt - depth) / depth < 1e-9);
  }
}

TEST_CASE("pose network is the identity at initialization") {
  auto cfg = ArchConfig::tiny();
  Model<double> model(cfg, 51);
  auto in = random_input<double>(cfg, 52);
  Rng crop_rng(53);
  auto prev = testutil::random_image<double>(crop_rng, cfg.input_side, cfg.input_side);
  auto next = testutil::random_image<double>(crop_rng, cfg.input_side, cfg.input_side);

  ad::Graph<double> g;
  auto pv = leaf_params(g, model.params(), {});
  auto out = model.forward_full(g, pv, in, Strategy::SELFSUP_AUX, &prev, &next);
  REQUIRE(out.pose_prev.has_value());
  REQUIRE(out.pose_next.has_value());
  for (std::size_t i = 0; i < 6; ++i) {
    REQUIRE(out.pose_prev->value()[i] == 0.0);
    REQUIRE(out.pose_next->value()[i] == 0.0);
  }

  // Missing source crops is an error for the self-supervised strategy.
  REQUIRE_THROWS_AS(model.forward_full(g, pv, in, Strategy::SELFSUP_AUX),
                    std::invalid_argument);

  // With a generic (noised) final layer the two input orders need not agree.
  Rng noise(55);
  auto& fcw = model.params().at("pn.fc.w");
  for (std::size_t i = 0; i < fcw.size(); ++i)
    fcw[i] = static_cast<double>(noise.normal(0.0, 0.1));
  ad::Graph<double> g2;
  auto pv2 = leaf_params(g2, model.params(), {});
  auto a = ad::constant(g2, in.search);
  auto b = ad::constant(g2, prev);
  auto ab = model.pose_net(g2, pv2, a, b);
  auto ba = model.pose_net(g2, pv2, b, a);
  bool all_equal = true;
  for (std::size_t i = 0; i < 6; ++i)
    all_equal = all_equal && ab.value()[i] == ba.value()[i];
  REQUIRE_FALSE(all_equal);
}

TEST_CASE("forward passes are deterministic and share one extractor pass") {
  auto cfg = ArchConfig::tiny();
  Model<double> model(cfg, 61);
  auto in = random_input<double>(cfg, 62);
  auto in2 = random_input<double>(cfg, 63);
  Rng rng(64);
  auto prev = testutil::random_image<double>(rng, cfg.input_side, cfg.input_side);
  auto next = testutil::random_image<double>(rng, cfg.input_side, cfg.input_side);

  auto run = [&](const ModelInput<double>& sample, Strategy s) {
    ad::Graph<double> g;
    auto pv = leaf_params(g, model.params(), {});
    auto out = model.forward_full(g, pv, sample, s, &prev, &next);
    std::vector<double> flat(out.track.box.value().data(),
                             out.track.box.value().data() + 4);
    for (const auto& d : out.disp)
      flat.insert(flat.end(), d.value().data(),
                  d.value().data() + d.value().size());
    if (out.pose_prev)
      flat.insert(flat.end(), out.pose_prev->value().data(),
                  out.pose_prev->value().data() + 6);
    return flat;
  };

  for (Strategy s : {Strategy::TRACK_ONLY_LARGE, Strategy::SUPERVISED_AUX,
                     Strategy::SELFSUP_AUX}) {
    model.extract_calls = 0;
    auto first = run(in, s);
    REQUIRE(model.extract_calls == 1);
    auto second = run(in, s);
    REQUIRE(first == second);  // bit-identical
  }

  // Sample order does not leak state between independent evaluations.
  auto a_then = run(in, Strategy::TRACK_ONLY_LARGE);
  (void)run(in2, Strategy::TRACK_ONLY_LARGE);
  auto a_after = run(in, Strategy::TRACK_ONLY_LARGE);
  REQUIRE(a_then == a_after);
}

TEST_CASE("tracking outputs are invariant to auxiliary weights and export") {
  auto cfg = ArchConfig::tiny();
  Model<double> model(cfg, 71);
  auto in = random_input<double>(cfg, 72);

  auto track_bits = [&](const Model<double>& m) {
    auto out = m.track_inference(in);
    std::vector<double> flat{out.box.x, out.box.y, out.box.w, out.box.h};
    flat.insert(flat.end(), out.tl_heat.data(),
                out.tl_heat.data() + out.tl_heat.size());
    flat.insert(flat.end(), out.br_heat.data(),
                out.br_heat.data() + out.br_heat.size());
    flat.insert(flat.end(), out.attn_map.data(),
                out.attn_map.data() + out.attn_map.size());
    return flat;
  };

  auto baseline = track_bits(model);

  // Scrambling the auxiliary groups must not move a single bit.
  Model<double> scrambled(cfg, 71);
  Rng noise(73);
  for (auto& e : scrambled.params().entries())
    if (e.group == "depth_head" || e.group == "pose_net")
      for (std::size_t i = 0; i < e.value.size(); ++i)
        e.value[i] = noise.normal(0.0, 1.0);
  REQUIRE(track_bits(scrambled) == baseline);

  auto exported = model.export_inference();
  REQUIRE(track_bits(exported) == baseline);

  std::size_t expect = model.params().param_count() -
                       model.params().param_count("depth_head") -
                       model.params().param_count("pose_net");
  REQUIRE(exported.params().param_count() == expect);
  REQUIRE(exported.params().param_count("depth_head") == 0);
  REQUIRE(exported.params().param_count("pose_net") == 0);
}

namespace {

struct FdHarness {
  ArchConfig cfg = ArchConfig::tiny();
  Model<double> model{cfg, 81};
  ModelInput<double> in = random_input<double>(cfg, 82);
  Tensor<double> prev, next;
  Tensor<double> gt_box;
  Tensor<double> d_gt;
  Tensor<double> m_p;
  Intrinsics k;
  LossWeights w;

  FdHarness() {
    Rng rng(83);
    gt_box = Tensor<double>({4});
    prev = testutil::random_image<double>(rng, cfg.input_side, cfg.input_side);
    next = testutil::random_image<double>(rng, cfg.input_side, cfg.input_side);
    gt_box[0] = 0.28;
    gt_box[1] = 0.22;
    gt_box[2] = 0.46;
    gt_box[3] = 0.51;
    d_gt = testutil::random_depth<double>(rng, cfg.input_side, cfg.input_side,
                                          0.5, 6.0);
    m_p = Tensor<double>({cfg.input_side, cfg.input_side}, TensorRole::Mask);
    for (int v = 0; v < cfg.input_side; ++v)
      for (int u = cfg.input_side - 4; u < cfg.input_side; ++u)
        m_p.at(v, u) = 1.0;
    k = Intrinsics::pseudo(cfg.input_side, cfg.input_side);
  }

  // Builds the full loss for one strategy on a fresh graph. For the
  // self-supervised path the structure pointer freezes discrete choices.
  double eval(Strategy strategy, SelfsupStructure<double>* frozen,
              bool backward,
              std::unordered_map<std::string, Tensor<double>>* grads) {
    ad::Graph<double> g;
    auto pv = leaf_params(g, model.params(), param_groups());
    auto out = model.forward_full(g, pv, in, strategy, &prev, &next);
    auto l_tk = tracking_loss_var(out.track.box, ad::constant(g, gt_box), w);

    ad::Var<double> total = l_tk;
    if (strategy == Strategy::SUPERVISED_AUX) {
      auto disp0 = ad::reshape(out.disp[0], {cfg.input_side, cfg.input_side});
      auto depth = ad::div(
          ad::constant(g, Tensor<double>::full({cfg.input_side, cfg.input_side}, 1.0)),
          ad::add_const(ad::mul_const(disp0, kDispA), kDispB));
      auto l_sd = supervised_depth_loss_var(depth, ad::constant(g, d_gt), m_p);
      total = ad::add(ad::mul_const(l_tk, 1.0 - w.alpha),
                      ad::mul_const(l_sd, w.alpha));
    } else if (strategy == Strategy::SELFSUP_AUX) {
      auto res = selfsup_depth_loss_var(
          out.disp, ad::constant(g, in.search), ad::constant(g, prev),
          ad::constant(g, next), *out.pose_prev, *out.pose_next, k, m_p, w,
          frozen);
      total = ad::add(ad::mul_const(l_tk, 1.0 - w.alpha),
                      ad::mul_const(res.aux, w.alpha));
    }

    double value = total.value()[0];
    if (backward) {
      g.backward(total.id);
      for (const auto& e : model.params().entries()) {
        const auto& grad = pv.at(e.name).grad();
        (*grads)[e.name] =
            grad.empty() ? Tensor<double>(e.value.shape()) : grad;
      }
    }
    return value;
  }

  // Central finite differences against the analytic gradient on a stratified
  // random subset of parameters.
  double sweep(Strategy strategy, const std::vector<std::string>& groups,
               int probes_per_group, std::uint64_t pick_seed) {
    SelfsupStructure<double> frozen;
    SelfsupStructure<double>* fz =
        strategy == Strategy::SELFSUP_AUX ? &frozen : nullptr;
    std::unordered_map<std::string, Tensor<double>> grads;
    double base = eval(strategy, fz, true, &grads);
    REQUIRE(std::isfinite(base));

    const double h = 1e-4;
    double worst = 0.0;
    Rng pick(mix64(pick_seed));
    for (const auto& gname : groups) {
      std::vector<int> entry_ids;
      const auto& entries = model.params().entries();
      for (int i = 0; i < static_cast<int>(entries.size()); ++i)
        if (entries[static_cast<std::size_t>(i)].group == gname &&
            entries[static_cast<std::size_t>(i)].value.size() > 0)
          entry_ids.push_back(i);
      for (int p = 0; p < probes_per_group; ++p) {
        auto& e = model.params().entries()[static_cast<std::size_t>(
            entry_ids[static_cast<std::size_t>(
                pick.uniform_int(0, static_cast<int>(entry_ids.size()) - 1))])];
        std::size_t idx = static_cast<std::size_t>(
            pick.uniform_int(0, static_cast<int>(e.value.size()) - 1));
        double orig = e.value[idx];
        e.value[idx] = orig + h;
        double fp = eval(strategy, fz, false, nullptr);
        e.value[idx] = orig - h;
        double fm = eval(strategy, fz, false, nullptr);
        e.value[idx] = orig;
        double fd = (fp - fm) / (2 * h);
        double an = grads.at(e.name)[idx];
        double re = rel_err(fd, an);
        INFO(gname << " " << e.name << "[" << idx << "] fd=" << fd
                   << " an=" << an);
        CHECK(re < 1e-3);
        worst = std::max(worst, re);
      }
    }
    return worst;
  }
};

}  // namespace

TEST_CASE("scalar probe through the extractor passes finite differences") {
  FdHarness hx;
  Rng wrng(91);
  // Fixed random projection of the finest decoder map.
  const int side = hx.cfg.input_side / 2;
  Tensor<double> proj({side, side, hx.cfg.stage_channels[0]});
  for (std::size_t i = 0; i < proj.size(); ++i)
    proj[i] = wrng.normal(0.0, 1.0);

  std::unordered_map<std::string, Tensor<double>> grads;
  auto eval = [&](bool backward) {
    ad::Graph<double> g;
    auto pv = leaf_params(g, hx.model.params(), param_groups());
    auto feats = hx.model.extract_features(g, pv, ad::constant(g, hx.in.search),
                                           ad::constant(g, hx.in.tmpl));
    auto probe = ad::weighted_sum(feats.phi[0], proj);
    if (backward) {
      g.backward(probe.id);
      for (const auto& e : hx.model.params().entries()) {
        const auto& grad = pv.at(e.name).grad();
        grads[e.name] = grad.empty() ? Tensor<double>(e.value.shape()) : grad;
      }
    }
    return probe.value()[0];
  };

  eval(true);
  const double h = 1e-4;
  Rng pick(92);
  double worst = 0.0;
  for (int p = 0; p < 24; ++p) {
    auto& entries = hx.model.params().entries();
    Tensor<double>* field = nullptr;
    std::string name;
    while (!field) {
      auto& e = entries[static_cast<std::size_t>(
          pick.uniform_int(0, static_cast<int>(entries.size()) - 1))];
      if (e.group == "patch_embed" || e.group == "encoder" || e.group == "decoder") {
        field = &e.value;
        name = e.name;
      }
    }
    std::size_t idx = static_cast<std::size_t>(
        pick.uniform_int(0, static_cast<int>(field->size()) - 1));
    double orig = (*field)[idx];
    (*field)[idx] = orig + h;
    double fp = eval(false);
    (*field)[idx] = orig - h;
    double fm = eval(false);
    (*field)[idx] = orig;
    double re = rel_err((fp - fm) / (2 * h), grads.at(name)[idx]);
    INFO(name << "[" << idx << "]");
    CHECK(re < 1e-3);
    worst = std::max(worst, re);
  }
  INFO("worst relative error " << worst);
  REQUIRE(worst < 1e-3);
}

TEST_CASE("finite differences hold through the tracking-only loss") {
  FdHarness hx;
  double worst = hx.sweep(
      Strategy::TRACK_ONLY_LARGE,
      {"patch_embed", "encoder", "decoder", "tracking_head"}, 5, 93);
  INFO("worst relative error " << worst);
  REQUIRE(worst < 1e-3);
}

TEST_CASE("finite differences hold through the supervised auxiliary loss") {
  FdHarness hx;
  double worst = hx.sweep(
      Strategy::SUPERVISED_AUX,
      {"patch_embed", "encoder", "decoder", "tracking_head", "depth_head"}, 5,
      94);
  INFO("worst relative error " << worst);
  REQUIRE(worst < 1e-3);
}

TEST_CASE("finite differences hold through the self-supervised loss") {
  FdHarness hx;
  // A generic pose head: after any first optimizer step the final layer is
  // nonzero, so probe that state rather than the exact-zero saddle.
  Rng noise(95);
  auto& fcw = hx.model.params().at("pn.fc.w");
  for (std::size_t i = 0; i < fcw.size(); ++i) fcw[i] = noise.normal(0.0, 0.05);
  double worst = hx.sweep(Strategy::SELFSUP_AUX, param_groups(), 4, 96);
  INFO("worst relative error " << worst);
  REQUIRE(worst < 1e-3);
}

TEST_CASE("every group receives a finite nonzero gradient when enabled") {
  FdHarness hx;
  Rng noise(97);
  auto& fcw = hx.model.params().at("pn.fc.w");
  for (std::size_t i = 0; i < fcw.size(); ++i) fcw[i] = noise.normal(0.0, 0.05);

  SelfsupStructure<double> frozen;
  std::unordered_map<std::string, Tensor<double>> grads;
  hx.eval(Strategy::SELFSUP_AUX, &frozen, true, &grads);

  std::unordered_map<std::string, double> group_max;
  for (const auto& e : hx.model.params().entries()) {
    const auto& grad = grads.at(e.name);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      REQUIRE(std::isfinite(grad[i]));
      group_max[e.group] = std::max(group_max[e.group], std::abs(grad[i]));
    }
  }
  for (const auto& gname : param_groups()) {
    INFO("group " << gname);
    REQUIRE(group_max[gname] > 0.0);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly and reproducibly") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "auxtrack_ckpt_test";
  fs::create_directories(dir);
  std::string prefix = (dir / "ckpt").string();

  auto cfg = ArchConfig::tiny();
  Model<float> model(cfg, 101);
  CheckpointMeta meta;
  meta.arch = cfg;
  meta.strategy = Strategy::SELFSUP_AUX;
  meta.seed = 101;
  meta.step = 777;

  ParamStore<float> opt;
  Rng rng(102);
  opt.add("adam_m", "m.probe", testutil::random_image<float>(rng, 2, 3, 1));
  opt.add("adam_v", "v.probe", testutil::random_image<float>(rng, 2, 3, 1));

  save_checkpoint(prefix, meta, model.params(), &opt);
  auto loaded = load_checkpoint(prefix);

  REQUIRE(loaded.meta.arch.input_side == cfg.input_side);
  REQUIRE(loaded.meta.arch.stage_channels == cfg.stage_channels);
  REQUIRE(loaded.meta.arch.depth_bias_init == cfg.depth_bias_init);
  REQUIRE(loaded.meta.strategy == Strategy::SELFSUP_AUX);
  REQUIRE(loaded.meta.seed == 101);
  REQUIRE(loaded.meta.step == 777);
  REQUIRE(loaded.has_opt);

  REQUIRE(loaded.params.entries().size() == model.params().entries().size());
  for (std::size_t i = 0; i < model.params().entries().size(); ++i) {
    const auto& a = model.params().entries()[i];
    const auto& b = loaded.params.entries()[i];
    REQUIRE(a.name == b.name);
    REQUIRE(a.group == b.group);
    REQUIRE(a.value.shape() == b.value.shape());
    for (std::size_t j = 0; j < a.value.size(); ++j)
      REQUIRE(a.value[j] == b.value[j]);
  }
  for (std::size_t j = 0; j < 6; ++j)
    REQUIRE(loaded.opt_state.entries()[0].value[j] ==
            opt.entries()[0].value[j]);

  // Saving the same state twice produces byte-identical files.
  std::string prefix2 = (dir / "ckpt2").string();
  save_checkpoint(prefix2, meta, model.params(), &opt);
  auto slurp = [](const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f),
                       std::istreambuf_iterator<char>());
  };
  REQUIRE(slurp(prefix + ".json") == slurp(prefix2 + ".json"));
  REQUIRE(slurp(prefix + ".blob") == slurp(prefix2 + ".blob"));

  // A truncated blob is rejected.
  std::string prefix3 = (dir / "ckpt3").string();
  save_checkpoint(prefix3, meta, model.params());
  fs::resize_file(prefix3 + ".blob", 8);
  REQUIRE_THROWS(load_checkpoint(prefix3));

  // Inference export round-trips through the same format.
  auto exported = model.export_inference();
  std::string prefix4 = (dir / "ckpt4").string();
  save_checkpoint(prefix4, meta, exported.params());
  auto loaded4 = load_checkpoint(prefix4);
  REQUIRE(loaded4.params.param_count("depth_head") == 0);
  REQUIRE(loaded4.params.param_count() == exported.params().param_count());

  fs::remove_all(dir);
}

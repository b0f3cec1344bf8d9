#include <catch2/catch_amalgamated.hpp>

#include "auxtrack/losses.hpp"
#include "test_util.hpp"

using namespace auxtrack;
using ad::Graph;
using ad::Var;

namespace {

Tensor<double> constant_image(int h, int w, int c, double v) {
  return Tensor<double>::full({h, w, c}, v);
}

double rel_err(double fd, double an) {
  double denom = std::max(std::abs(fd), std::abs(an));
  if (denom < 1e-10) return std::abs(fd - an) < 1e-8 ? 0.0 : 1.0;
  return std::abs(fd - an) / denom;
}

}  // namespace

TEST_CASE("ssim of an image with itself is exactly one") {
  Rng rng(101);
  auto img = testutil::random_image<double>(rng, 9, 11, 3);
  Tensor<double> s = ssim(img, img);
  for (std::size_t i = 0; i < s.size(); ++i) REQUIRE(s[i] == 1.0);
}

TEST_CASE("ssim of constant images matches the closed form") {
  double v1 = 0.3, v2 = 0.7;
  auto a = constant_image(6, 7, 1, v1);
  auto b = constant_image(6, 7, 1, v2);
  double expect = (2 * v1 * v2 + kSsimC1) / (v1 * v1 + v2 * v2 + kSsimC1);
  Tensor<double> s = ssim(a, b);
  for (std::size_t i = 0; i < s.size(); ++i)
    REQUIRE_THAT(s[i], Catch::Matchers::WithinAbs(expect, 1e-12));
}

TEST_CASE("ssim is symmetric and bounded") {
  Rng rng(102);
  auto a = testutil::random_image<double>(rng, 8, 8, 3);
  auto b = testutil::random_image<double>(rng, 8, 8, 3);
  Tensor<double> sab = ssim(a, b), sba = ssim(b, a);
  for (std::size_t i = 0; i < sab.size(); ++i) {
    REQUIRE_THAT(sab[i], Catch::Matchers::WithinAbs(sba[i], 1e-14));
    REQUIRE(sab[i] >= -1.0);
    REQUIRE(sab[i] <= 1.0 + 1e-12);
  }
  REQUIRE_THROWS_AS(ssim(a, constant_image(8, 9, 3, 0.5)), std::invalid_argument);
}

TEST_CASE("photometric error blends SSIM and L1") {
  Rng rng(103);
  auto img = testutil::random_image<double>(rng, 8, 8, 3);

  SECTION("identical images give a zero map") {
    Tensor<double> pe = photometric_error(img, img, 0.85);
    for (std::size_t i = 0; i < pe.size(); ++i)
      REQUIRE_THAT(pe[i], Catch::Matchers::WithinAbs(0.0, 1e-15));
  }
  SECTION("beta zero reduces to channel-mean L1") {
    auto other = testutil::random_image<double>(rng, 8, 8, 3);
    Tensor<double> pe = photometric_error(img, other, 0.0);
    for (int v = 0; v < 8; ++v)
      for (int u = 0; u < 8; ++u) {
        double l1 = 0;
        for (int c = 0; c < 3; ++c) l1 += std::abs(img.at(v, u, c) - other.at(v, u, c));
        REQUIRE_THAT(pe.at(v, u), Catch::Matchers::WithinAbs(l1 / 3.0, 1e-14));
      }
  }
  SECTION("constant images 0.2 vs 0.4 match the scalar oracle") {
    auto a = constant_image(6, 6, 3, 0.2);
    auto b = constant_image(6, 6, 3, 0.4);
    double s = (2 * 0.2 * 0.4 + kSsimC1) / (0.2 * 0.2 + 0.4 * 0.4 + kSsimC1);
    double expect = 0.85 * (1 - s) / 2 + 0.15 * 0.2;
    Tensor<double> pe = photometric_error(a, b, 0.85);
    for (std::size_t i = 0; i < pe.size(); ++i)
      REQUIRE_THAT(pe[i], Catch::Matchers::WithinAbs(expect, 1e-12));
  }
}

TEST_CASE("min reprojection takes the per-pixel minimum") {
  Tensor<double> lo = Tensor<double>::full({5, 5}, 0.1);
  Tensor<double> hi = Tensor<double>::full({5, 5}, 0.4);
  Tensor<double> m = min_reprojection(lo, hi);
  REQUIRE(max_abs_diff(m, lo) == 0.0);
  REQUIRE(max_abs_diff(min_reprojection(hi, hi), hi) == 0.0);

  // Occlusion visible in only one source: the min map stays low where the
  // mean map spikes.
  Tensor<double> pe_prev = Tensor<double>::full({6, 6}, 0.1);
  Tensor<double> pe_next = Tensor<double>::full({6, 6}, 0.1);
  pe_prev.at(2, 2) = 0.9;
  pe_next.at(4, 4) = 0.9;
  Tensor<double> mn = min_reprojection(pe_prev, pe_next);
  REQUIRE(mn.at(2, 2) == 0.1);
  REQUIRE(mn.at(4, 4) == 0.1);
  REQUIRE(mn.at(2, 2) < 0.5 * (pe_prev.at(2, 2) + pe_next.at(2, 2)));
}

TEST_CASE("stationary mask degenerate cases") {
  Rng rng(104);
  auto target = testutil::random_image<double>(rng, 8, 8, 3);

  SECTION("static pair masks everything out") {
    std::vector<Tensor<double>> warped{target, target};
    std::vector<Tensor<double>> sources{target, target};
    Tensor<double> m = stationary_mask(target, warped, sources, 0.85);
    for (std::size_t i = 0; i < m.size(); ++i) REQUIRE(m[i] == 0.0);
  }
  SECTION("perfect warp against offset sources keeps everything") {
    Tensor<double> off = target;
    for (std::size_t i = 0; i < off.size(); ++i) off[i] = std::min(off[i] + 0.3, 1.0);
    std::vector<Tensor<double>> warped{target, target};
    std::vector<Tensor<double>> sources{off, off};
    Tensor<double> m = stationary_mask(target, warped, sources, 0.85);
    for (std::size_t i = 0; i < m.size(); ++i) REQUIRE(m[i] == 1.0);
  }
}

TEST_CASE("smoothness loss") {
  SECTION("constant disparity costs nothing") {
    Rng rng(105);
    auto img = testutil::random_image<double>(rng, 8, 8, 3);
    REQUIRE(smoothness_loss(Tensor<double>::full({8, 8}, 2.5), img) == 0.0);
  }
  SECTION("a step along a strong edge is cheaper than on flat texture") {
    Tensor<double> disp({8, 8});
    for (int v = 0; v < 8; ++v)
      for (int u = 0; u < 8; ++u) disp.at(v, u) = u < 4 ? 1.0 : 2.0;
    Tensor<double> edge_img({8, 8, 1});
    for (int v = 0; v < 8; ++v)
      for (int u = 0; u < 8; ++u) edge_img.at(v, u, 0) = u < 4 ? 0.0 : 1.0;
    Tensor<double> flat_img = Tensor<double>::full({8, 8, 1}, 0.5);
    REQUIRE(smoothness_loss(disp, edge_img) < smoothness_loss(disp, flat_img));
  }
  SECTION("invariant to positive disparity scaling") {
    Rng rng(106);
    auto img = testutil::random_image<double>(rng, 8, 8, 3);
    Tensor<double> disp({8, 8});
    for (std::size_t i = 0; i < disp.size(); ++i) disp[i] = rng.uniform(0.5, 2.0);
    double base = smoothness_loss(disp, img);
    for (double s : {2.0, 0.5, 7.0}) {
      Tensor<double> scaled = disp;
      for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= s;
      REQUIRE_THAT(smoothness_loss(scaled, img), Catch::Matchers::WithinAbs(base, 1e-12));
    }
  }
  SECTION("nonpositive disparity is rejected") {
    Rng rng(107);
    auto img = testutil::random_image<double>(rng, 4, 4, 1);
    Tensor<double> disp = Tensor<double>::full({4, 4}, 1.0);
    disp.at(2, 2) = 0.0;
    REQUIRE_THROWS_AS(smoothness_loss(disp, img), std::invalid_argument);
  }
}

TEST_CASE("supervised depth loss counts only unpadded pixels") {
  Tensor<double> d = Tensor<double>::full({4, 4}, 3.0);
  Tensor<double> m_p({4, 4});
  for (int v = 0; v < 4; ++v)
    for (int u = 0; u < 4; ++u) m_p.at(v, u) = v < 2 ? 0.0 : 1.0;

  SECTION("perfect prediction") {
    REQUIRE(supervised_depth_loss(d, d, m_p) == 0.0);
  }
  SECTION("error confined to padding is invisible") {
    Tensor<double> d_hat = d;
    for (int v = 2; v < 4; ++v)
      for (int u = 0; u < 4; ++u) d_hat.at(v, u) += 5.0;
    REQUIRE(supervised_depth_loss(d_hat, d, m_p) == 0.0);
  }
  SECTION("half the valid pixels off by one gives one half") {
    Tensor<double> d_hat = d;
    for (int u = 0; u < 4; ++u) d_hat.at(0, u) += 1.0;  // 4 of the 8 valid
    REQUIRE_THAT(supervised_depth_loss(d_hat, d, m_p),
                 Catch::Matchers::WithinAbs(0.5, 1e-14));
  }
  SECTION("fully padded mask is an error") {
    REQUIRE_THROWS_AS(supervised_depth_loss(d, d, Tensor<double>::full({4, 4}, 1.0)),
                      std::invalid_argument);
  }
}

TEST_CASE("giou loss hand cases") {
  Box a{0, 0, 1, 1};
  REQUIRE(giou_loss(a, a) == 0.0);

  Box b{2, 0, 1, 1};
  REQUIRE_THAT(giou_loss(a, b), Catch::Matchers::WithinAbs(4.0 / 3.0, 1e-12));

  double s = 3.7;
  REQUIRE_THAT(giou_loss(a.scaled(s), b.scaled(s)),
               Catch::Matchers::WithinAbs(giou_loss(a, b), 1e-12));

  REQUIRE_THROWS_AS(giou_loss(Box{0, 0, 0, 0}, Box{1, 1, 0, 0}),
                    std::invalid_argument);
}

TEST_CASE("tracking loss") {
  LossWeights w;
  Box gt{0.2, 0.3, 0.3, 0.25};
  REQUIRE(tracking_loss(gt, gt, w) == 0.0);

  SECTION("uniform offset contributes exactly lambda_l1 times the offset") {
    Box pred{gt.x + 0.1, gt.y + 0.1, gt.w + 0.1, gt.h + 0.1};
    double l1_part = tracking_loss(pred, gt, w) - w.lambda_giou * giou_loss(pred, gt);
    REQUIRE_THAT(l1_part, Catch::Matchers::WithinAbs(5.0 * 0.1, 1e-12));
  }
  SECTION("nonnegative, zero only at equality") {
    Rng rng(108);
    for (int i = 0; i < 200; ++i) {
      Box p{rng.uniform(0, 0.6), rng.uniform(0, 0.6), rng.uniform(0.05, 0.4),
            rng.uniform(0.05, 0.4)};
      Box q{rng.uniform(0, 0.6), rng.uniform(0, 0.6), rng.uniform(0.05, 0.4),
            rng.uniform(0.05, 0.4)};
      double l = tracking_loss(p, q, w);
      REQUIRE(l >= 0.0);
      REQUIRE(l > 0.0);  // random continuous coords never tie
      REQUIRE(tracking_loss(p, p, w) == 0.0);
    }
  }
}

TEST_CASE("total loss blends by strategy") {
  REQUIRE(total_loss(Strategy::SUPERVISED_AUX, 1.0, 2.0, 0.4) == Catch::Approx(1.4));
  REQUIRE(total_loss(Strategy::SELFSUP_AUX, 0.7, 5.0, 0.0) == 0.7);
  REQUIRE(total_loss(Strategy::SELFSUP_AUX, 0.7, 5.0, 1.0) == 5.0);
  REQUIRE(total_loss(Strategy::TRACK_ONLY_LARGE, 0.7, 99.0, 0.4) == 0.7);
  REQUIRE(total_loss(Strategy::TRACK_ONLY_SMALL, 0.7, 99.0, 0.4) == 0.7);

  // Affine in both arguments with coefficients (1-alpha, alpha).
  Rng rng(109);
  for (int i = 0; i < 50; ++i) {
    double alpha = rng.uniform();
    double t = rng.uniform(0, 3), d = rng.uniform(0, 3), dt = rng.uniform(0, 1);
    double base = total_loss(Strategy::SELFSUP_AUX, t, d, alpha);
    REQUIRE_THAT(total_loss(Strategy::SELFSUP_AUX, t + dt, d, alpha) - base,
                 Catch::Matchers::WithinAbs((1 - alpha) * dt, 1e-12));
    REQUIRE_THAT(total_loss(Strategy::SELFSUP_AUX, t, d + dt, alpha) - base,
                 Catch::Matchers::WithinAbs(alpha * dt, 1e-12));
  }
}

TEST_CASE("loss weights validate their ranges") {
  LossWeights w;
  REQUIRE_NOTHROW(w.validate());
  w.alpha = 1.2;
  REQUIRE_THROWS_AS(w.validate(), std::invalid_argument);
  w.alpha = 0.4;
  w.lambda_giou = -1;
  REQUIRE_THROWS_AS(w.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Tape versions agree with the pure versions.
// ---------------------------------------------------------------------------

TEST_CASE("tape tracking loss matches the pure value and its gradient checks out") {
  LossWeights w;
  Box pred{0.18, 0.32, 0.35, 0.22};
  Box gt{0.25, 0.28, 0.30, 0.27};
  Tensor<double> pt({4}), gtt({4});
  pt[0] = pred.x; pt[1] = pred.y; pt[2] = pred.w; pt[3] = pred.h;
  gtt[0] = gt.x; gtt[1] = gt.y; gtt[2] = gt.w; gtt[3] = gt.h;

  auto eval = [&](const Tensor<double>& p, const Tensor<double>& q) {
    Graph<double> g;
    return tracking_loss_var(ad::leaf(g, p, false), ad::leaf(g, q, false), w)
        .value()[0];
  };
  REQUIRE_THAT(eval(pt, gtt),
               Catch::Matchers::WithinAbs(tracking_loss(pred, gt, w), 1e-12));

  Graph<double> g;
  auto vp = ad::leaf(g, pt, true);
  auto vq = ad::leaf(g, gtt, true);
  auto loss = tracking_loss_var(vp, vq, w);
  g.backward(loss.id);
  const double h = 1e-6;
  for (int i = 0; i < 4; ++i) {
    Tensor<double> pp = pt;
    pp[i] += h;
    Tensor<double> pm = pt;
    pm[i] -= h;
    double fd = (eval(pp, gtt) - eval(pm, gtt)) / (2 * h);
    REQUIRE(rel_err(fd, vp.grad()[i]) < 1e-5);

    Tensor<double> qp = gtt;
    qp[i] += h;
    Tensor<double> qm = gtt;
    qm[i] -= h;
    fd = (eval(pt, qp) - eval(pt, qm)) / (2 * h);
    REQUIRE(rel_err(fd, vq.grad()[i]) < 1e-5);
  }
}

TEST_CASE("tape supervised depth loss matches pure and finite differences") {
  Rng rng(110);
  auto d = testutil::random_depth<double>(rng, 8, 8);
  auto d_hat = testutil::random_depth<double>(rng, 8, 8);
  Tensor<double> m_p({8, 8});
  for (int v = 0; v < 8; ++v) m_p.at(v, 7) = 1.0;  // padded right column

  auto eval = [&](const Tensor<double>& dh, const Tensor<double>& dd) {
    Graph<double> g;
    return supervised_depth_loss_var(ad::leaf(g, dh, false), ad::leaf(g, dd, false),
                                     m_p)
        .value()[0];
  };
  REQUIRE_THAT(eval(d_hat, d),
               Catch::Matchers::WithinAbs(supervised_depth_loss(d_hat, d, m_p), 1e-13));

  Graph<double> g;
  auto vdh = ad::leaf(g, d_hat, true);
  auto vd = ad::leaf(g, d, true);
  auto loss = supervised_depth_loss_var(vdh, vd, m_p);
  g.backward(loss.id);
  const double h = 1e-5;
  Rng pick_rng(111);
  for (int k = 0; k < 12; ++k) {
    std::size_t i = static_cast<std::size_t>(pick_rng.uniform_int(0, 63));
    Tensor<double> p = d_hat;
    p[i] += h;
    Tensor<double> m = d_hat;
    m[i] -= h;
    double fd = (eval(p, d) - eval(m, d)) / (2 * h);
    REQUIRE(rel_err(fd, vdh.grad()[i]) < 1e-5);

    p = d;
    p[i] += h;
    m = d;
    m[i] -= h;
    fd = (eval(d_hat, p) - eval(d_hat, m)) / (2 * h);
    REQUIRE(rel_err(fd, vd.grad()[i]) < 1e-5);
  }
  // Perturbing a padded pixel changes nothing.
  Tensor<double> poked = d_hat;
  poked.at(3, 7) += 17.0;
  REQUIRE(eval(poked, d) == eval(d_hat, d));
  REQUIRE(vdh.grad().at(3, 7) == 0.0);
}

TEST_CASE("tape smoothness with a full mask matches the pure loss") {
  Rng rng(112);
  auto img = testutil::random_image<double>(rng, 8, 8, 3);
  Tensor<double> disp({8, 8});
  for (std::size_t i = 0; i < disp.size(); ++i) disp[i] = rng.uniform(0.5, 2.0);

  Graph<double> g;
  auto vdisp = ad::leaf(g, disp.reshaped({8, 8, 1}), true);
  auto vimg = ad::leaf(g, img, true);
  auto loss = smoothness_loss_var(vdisp, vimg, Tensor<double>::full({8, 8}, 1.0));
  REQUIRE_THAT(loss.value()[0],
               Catch::Matchers::WithinAbs(smoothness_loss(disp, img), 1e-13));

  g.backward(loss.id);
  auto eval = [&](const Tensor<double>& dd, const Tensor<double>& ii) {
    Graph<double> g2;
    return smoothness_loss_var(ad::leaf(g2, dd.reshaped({8, 8, 1}), false),
                               ad::leaf(g2, ii, false),
                               Tensor<double>::full({8, 8}, 1.0))
        .value()[0];
  };
  const double h = 1e-6;
  Rng pick_rng(113);
  for (int k = 0; k < 10; ++k) {
    std::size_t i = static_cast<std::size_t>(pick_rng.uniform_int(0, 63));
    Tensor<double> p = disp;
    p[i] += h;
    Tensor<double> m = disp;
    m[i] -= h;
    double fd = (eval(p, img) - eval(m, img)) / (2 * h);
    REQUIRE(rel_err(fd, vdisp.grad()[i]) < 1e-4);

    std::size_t j = static_cast<std::size_t>(pick_rng.uniform_int(0, 191));
    Tensor<double> ip = img;
    ip[j] += h;
    Tensor<double> im = img;
    im[j] -= h;
    fd = (eval(disp, ip) - eval(disp, im)) / (2 * h);
    REQUIRE(rel_err(fd, vimg.grad()[j]) < 1e-4);
  }
}

TEST_CASE("masked ssim is exactly one for identical inputs and matches pure ssim inside") {
  Rng rng(114);
  auto a = testutil::random_image<double>(rng, 8, 8, 3);
  auto b = testutil::random_image<double>(rng, 8, 8, 3);
  Tensor<double> valid = Tensor<double>::full({8, 8}, 1.0);

  Graph<double> g;
  auto s_same = ssim_masked_var(ad::leaf(g, a, false), ad::leaf(g, a, false), valid);
  for (std::size_t i = 0; i < s_same.value().size(); ++i)
    REQUIRE(s_same.value()[i] == 1.0);

  auto s_ab = ssim_masked_var(ad::leaf(g, a, false), ad::leaf(g, b, false), valid);
  Tensor<double> ref = ssim(a, b);
  for (int v = 1; v < 7; ++v)   // interior windows see no padding policy
    for (int u = 1; u < 7; ++u)
      REQUIRE_THAT(s_ab.value().at(v, u, 0),
                   Catch::Matchers::WithinAbs(ref.at(v, u), 1e-12));
}

TEST_CASE("self-supervised loss on a static pair reduces to pure smoothness") {
  Rng rng(115);
  const int h = 8, w = 8;
  auto target = testutil::random_image<double>(rng, h, w, 3);
  Tensor<double> m_p({h, w});

  std::vector<Tensor<double>> disp_t;
  for (int s = 0; s < 4; ++s) {
    int hs = h >> s, ws = w >> s;
    Tensor<double> d({hs, ws, 1});
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(0.35, 0.65);
    disp_t.push_back(d);
  }
  Tensor<double> id_pose({6});

  struct Outcome {
    double aux;
    LossReport report;
  };
  auto run = [&](double lambda) {
    Graph<double> g;
    std::vector<Var<double>> scales;
    for (auto& d : disp_t) scales.push_back(ad::leaf(g, d, true));
    LossWeights w2;
    w2.lambda_smooth = lambda;
    auto res = selfsup_depth_loss_var(
        scales, ad::leaf(g, target, false), ad::leaf(g, target, false),
        ad::leaf(g, target, false), ad::leaf(g, id_pose, false),
        ad::leaf(g, id_pose, false), Intrinsics::pseudo(w, h), m_p, w2);
    return Outcome{res.aux.value()[0], res.report};
  };

  // Stationary mask kills the photometric term exactly.
  auto res0 = run(0.0);
  REQUIRE(res0.aux == 0.0);
  REQUIRE(res0.report.mask_coverage == 0.0);

  // With smoothing on, the total is the mean of the per-scale smoothness terms.
  double lambda = 1e-3;
  auto res = run(lambda);
  double expect = 0.0;
  for (auto& d : disp_t) {
    Graph<double> g;
    auto up = ad::upsample_bilinear(ad::leaf(g, d, false), h, w);
    expect += lambda * smoothness_loss(up.value().reshaped({h, w}), target);
  }
  expect /= 4.0;
  REQUIRE_THAT(res.aux, Catch::Matchers::WithinAbs(expect, 1e-12));
  REQUIRE(res.report.per_scale.size() == 4);
  double mean_scales = 0;
  for (double v : res.report.per_scale) mean_scales += v;
  REQUIRE_THAT(res.report.depth_aux,
               Catch::Matchers::WithinAbs(mean_scales / 4.0, 1e-12));
}

namespace {

struct SelfsupInputs {
  std::vector<Tensor<double>> disp;
  Tensor<double> target, prev, next;
  Tensor<double> pose_prev, pose_next;
  Tensor<double> m_p;
  Intrinsics k;
  LossWeights w;
};

SelfsupInputs make_selfsup_inputs(std::uint64_t seed) {
  SelfsupInputs in;
  Rng rng(seed);
  const int h = 8, w = 8;
  for (int s = 0; s < 4; ++s) {
    int hs = h >> s, ws = w >> s;
    Tensor<double> d({hs, ws, 1});
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(0.35, 0.65);
    in.disp.push_back(d);
  }
  in.target = testutil::random_image<double>(rng, h, w, 3);
  in.prev = testutil::random_image<double>(rng, h, w, 3);
  in.next = testutil::random_image<double>(rng, h, w, 3);
  in.pose_prev = Tensor<double>({6});
  in.pose_next = Tensor<double>({6});
  for (int i = 0; i < 3; ++i) {
    in.pose_prev[i] = rng.uniform(-0.02, 0.02);
    in.pose_next[i] = rng.uniform(-0.02, 0.02);
    in.pose_prev[i + 3] = rng.uniform(-0.03, 0.03);
    in.pose_next[i + 3] = rng.uniform(-0.03, 0.03);
  }
  in.m_p = Tensor<double>({h, w});
  for (int v = 0; v < h; ++v) in.m_p.at(v, w - 1) = 1.0;  // padded right column
  in.k = Intrinsics::pseudo(w, h);
  return in;
}

double eval_selfsup(const SelfsupInputs& in, SelfsupStructure<double>* frozen) {
  Graph<double> g;
  std::vector<Var<double>> scales;
  for (auto& d : in.disp) scales.push_back(ad::leaf(g, d, false));
  auto res = selfsup_depth_loss_var(
      scales, ad::leaf(g, in.target, false), ad::leaf(g, in.prev, false),
      ad::leaf(g, in.next, false), ad::leaf(g, in.pose_prev, false),
      ad::leaf(g, in.pose_next, false), in.k, in.m_p, in.w, frozen);
  return res.aux.value()[0];
}

}  // namespace

TEST_CASE("self-supervised loss gradients match finite differences") {
  SelfsupInputs in = make_selfsup_inputs(116);

  // Analytic gradients with live structure; the same structure is then
  // replayed for every finite-difference probe.
  SelfsupStructure<double> frozen;
  Graph<double> g;
  std::vector<Var<double>> scales;
  for (auto& d : in.disp) scales.push_back(ad::leaf(g, d, true));
  auto vt = ad::leaf(g, in.target, true);
  auto vp = ad::leaf(g, in.prev, true);
  auto vn = ad::leaf(g, in.next, true);
  auto vpp = ad::leaf(g, in.pose_prev, true);
  auto vpn = ad::leaf(g, in.pose_next, true);
  auto res = selfsup_depth_loss_var(scales, vt, vp, vn, vpp, vpn, in.k, in.m_p,
                                    in.w, &frozen);
  REQUIRE(std::isfinite(res.aux.value()[0]));
  REQUIRE(res.aux.value()[0] > 0.0);
  REQUIRE(res.report.mask_coverage >= 0.0);
  REQUIRE(res.report.mask_coverage <= 1.0);
  g.backward(res.aux.id);

  const double h = 1e-4;
  double worst = 0.0;
  auto probe = [&](Tensor<double>& field, const Tensor<double>& grad,
                   std::size_t idx) {
    double orig = field[idx];
    field[idx] = orig + h;
    double fp = eval_selfsup(in, &frozen);
    field[idx] = orig - h;
    double fm = eval_selfsup(in, &frozen);
    field[idx] = orig;
    double fd = (fp - fm) / (2 * h);
    worst = std::max(worst, rel_err(fd, grad[idx]));
  };

  Rng pick_rng(117);
  for (int s = 0; s < 4; ++s) {
    auto& grad = scales[static_cast<std::size_t>(s)].grad();
    for (int k = 0; k < 6; ++k) {
      std::size_t idx = static_cast<std::size_t>(
          pick_rng.uniform_int(0, static_cast<int>(in.disp[s].size()) - 1));
      probe(in.disp[static_cast<std::size_t>(s)], grad, idx);
    }
  }
  for (int k = 0; k < 10; ++k) {
    std::size_t idx = static_cast<std::size_t>(pick_rng.uniform_int(0, 191));
    probe(in.target, vt.grad(), idx);
    probe(in.prev, vp.grad(), idx);
    probe(in.next, vn.grad(), idx);
  }
  for (std::size_t idx = 0; idx < 6; ++idx) {
    probe(in.pose_prev, vpp.grad(), idx);
    probe(in.pose_next, vpn.grad(), idx);
  }
  INFO("worst relative error " << worst);
  REQUIRE(worst < 1e-3);
}

TEST_CASE("padded pixels are invisible to the self-supervised loss") {
  SelfsupInputs in = make_selfsup_inputs(118);

  auto grads_of = [&](const SelfsupInputs& inputs) {
    Graph<double> g;
    std::vector<Var<double>> scales;
    for (auto& d : inputs.disp) scales.push_back(ad::leaf(g, d, true));
    auto res = selfsup_depth_loss_var(
        scales, ad::leaf(g, inputs.target, false), ad::leaf(g, inputs.prev, false),
        ad::leaf(g, inputs.next, false), ad::leaf(g, inputs.pose_prev, false),
        ad::leaf(g, inputs.pose_next, false), inputs.k, inputs.m_p, inputs.w);
    g.backward(res.aux.id);
    std::pair<double, std::vector<Tensor<double>>> out;
    out.first = res.aux.value()[0];
    for (auto& s : scales) out.second.push_back(s.grad());
    return out;
  };

  auto base = grads_of(in);

  SelfsupInputs noisy = in;
  Rng noise(119);
  for (int v = 0; v < 8; ++v) {
    noisy.target.at(v, 7, 0) = noise.uniform();
    noisy.target.at(v, 7, 1) = noise.uniform();
    noisy.target.at(v, 7, 2) = noise.uniform();
    noisy.prev.at(v, 7, 0) = noise.uniform();
    noisy.next.at(v, 7, 1) = noise.uniform();
  }
  auto poked = grads_of(noisy);

  REQUIRE(base.first == poked.first);
  for (int s = 0; s < 4; ++s)
    REQUIRE(max_abs_diff(base.second[static_cast<std::size_t>(s)],
                         poked.second[static_cast<std::size_t>(s)]) == 0.0);
}

TEST_CASE("normalizing by all pixels never exceeds the contributing-pixel mean") {
  SelfsupInputs in = make_selfsup_inputs(120);
  in.w.lambda_smooth = 0.0;
  double by_count = eval_selfsup(in, nullptr);
  in.w.norm = LossWeights::Norm::all;
  double by_all = eval_selfsup(in, nullptr);
  REQUIRE(std::isfinite(by_count));
  REQUIRE(std::isfinite(by_all));
  REQUIRE(by_all <= by_count + 1e-15);
}

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "acceptance.hpp"
#include "hsd/app.hpp"
#include "hsd/corpus.hpp"
#include "hsd/diffusion.hpp"
#include "hsd/layout.hpp"
#include "hsd/layout_generator.hpp"
#include "hsd/metrics.hpp"
#include "hsd/pipeline.hpp"
#include "hsd/tensor_util.hpp"

namespace hsd::acceptance {

namespace {

using F = Outcome;

torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kFloat64); }

double rel_err(const torch::Tensor& a, const torch::Tensor& ref) {
  return (a - ref).norm().item<double>() / std::max(ref.norm().item<double>(), 1e-300);
}

// Scalar transcription of the DDIM update with cumulative alpha_bar.
double ddim_scalar(double zt, double eps, double eps_rand, int t, int tp, double eta, const NoiseSchedule& s) {
  const double at = s.alpha_bar(t), ap = s.alpha_bar(tp);
  const double z0 = (zt - std::sqrt(1.0 - at) * eps) / std::sqrt(at);
  const double sigma = eta * std::sqrt((1.0 - ap) / (1.0 - at)) * std::sqrt(1.0 - at / ap);
  return std::sqrt(ap) * z0 + std::sqrt(1.0 - ap - sigma * sigma) * eps + sigma * eps_rand;
}

}  // namespace

void diffusion_math(Outcome& o) {
  torch::Generator g = make_generator(101);
  const NoiseSchedule s = make_schedule(1000);

  const std::int64_t n = 100000;
  double worst = 0.0;
  for (int t : {1, 100, 500, 999, 1000}) {
    const double ab = s.alpha_bar(t), z0v = 0.8;
    torch::Tensor zt = forward_sample(torch::full({n}, z0v, f64()), t, torch::randn({n}, g, f64()), s);
    const double mean = zt.mean().item<double>(), var = zt.var().item<double>();
    const double sd = std::sqrt(1.0 - ab), sn = std::sqrt(static_cast<double>(n));
    worst = std::max(worst, std::abs(mean - std::sqrt(ab) * z0v) / (4.0 * sd / sn));
    worst = std::max(worst, std::abs(var - (1.0 - ab)) / (4.0 * std::sqrt(2.0) * sd * sd / sn));
  }
  o.require(worst <= 1.0, "forward_sample moments, worst deviation " + F::fmt(worst) + " of the 4 sigma/sqrt(n) band");

  torch::Tensor z0 = torch::randn({2, 4, 8, 8}, g, f64()), eps = torch::randn({2, 4, 8, 8}, g, f64());
  double inv = 0.0;
  for (int t = 1; t <= s.T(); ++t) inv = std::max(inv, rel_err(ddim_step(forward_sample(z0, t, eps, s), eps, t, 0, 0.0, s), z0));
  for (const DdimStep& st : ddim_plan(s.T(), 50)) {
    if (st.t_prev == 0) continue;
    torch::Tensor next = ddim_step(forward_sample(z0, st.t, eps, s), eps, st.t, st.t_prev, 0.0, s);
    inv = std::max(inv, rel_err(next, forward_sample(z0, st.t_prev, eps, s)));
  }
  o.require(inv < 1e-5, "ddim inversion with true noise, max relative error " + F::fmt(inv));

  torch::Tensor zt = torch::randn({1, 2, 3, 3}, g, f64()), ep = torch::randn({1, 2, 3, 3}, g, f64()),
                er = torch::randn({1, 2, 3, 3}, g, f64());
  std::vector<DdimStep> pairs = ddim_plan(s.T(), 50);
  std::mt19937_64 rng(5);
  for (int k = 0; k < 50; ++k) {
    const int t = std::uniform_int_distribution<int>(2, s.T())(rng);
    pairs.push_back({t, std::uniform_int_distribution<int>(0, t - 1)(rng)});
  }
  double oracle = 0.0;
  for (const DdimStep& st : pairs) {
    torch::Tensor got = ddim_step(zt, ep, st.t, st.t_prev, 0.5, s, er).contiguous();
    const double* a = zt.data_ptr<double>();
    const double* b = ep.data_ptr<double>();
    const double* c = er.data_ptr<double>();
    const double* r = got.data_ptr<double>();
    for (std::int64_t i = 0; i < zt.numel(); ++i) {
      const double ref = ddim_scalar(a[i], b[i], c[i], st.t, st.t_prev, 0.5, s);
      oracle = std::max(oracle, std::abs(r[i] - ref) / std::max(1.0, std::abs(ref)));
    }
  }
  o.require(oracle <= 1e-10, "eta=0.5 update vs scalar transcription, max error " + F::fmt(oracle));

  std::vector<int> Ts{1, 2, 10, 50, 100, 250, 500, 1000, 2000, RunConfig{}.schedule.T};
  bool mono = true;
  for (int T : Ts) {
    const NoiseSchedule m = make_schedule(T);
    for (int t = 1; t <= T; ++t) {
      mono = mono && m.alpha_bar(t) < m.alpha_bar(t - 1) && m.alpha_bar(t) > 0.0 && m.beta(t) > 0.0 && m.beta(t) < 1.0;
      if (t > 1) mono = mono && m.beta(t) >= m.beta(t - 1);
    }
    mono = mono && m.alpha_bar(0) == 1.0;
  }
  o.require(mono, "schedule monotonicity for T in {1, 2, 10, 50, 100, 250, 500, 1000, 2000}");
}

void blending_partition(Outcome& o) {
  const int n = 1000, f = RunConfig{}.codec.f;
  const ClassSet& head = ClassTaxonomy::head_group();
  const ClassSet& body = ClassTaxonomy::body_group();
  int partition_bad = 0, layout_bad = 0, latent_bad = 0;
  torch::Generator g = make_generator(202);
  for (int i = 0; i < n; ++i) {
    const SemanticLayout l1 = make_sample(11, static_cast<std::uint64_t>(i), 64).layout;
    const SemanticLayout l2 = make_sample(12, static_cast<std::uint64_t>(i), 64).layout;
    const RegionMaskSet m = RegionMaskSet::from_head_body(region_mask(l1, head), region_mask(l2, body));
    const RegionMaskSet ml = m.downsample(f);
    for (const RegionMaskSet* set : {&m, &ml}) {
      for (int y = 0; y < set->height(); ++y) {
        for (int x = 0; x < set->width(); ++x) {
          const int sum = set->head().at(x, y) + set->body().at(x, y) + set->rest().at(x, y);
          if (sum != 1) ++partition_bad;
        }
      }
    }
    for (int y = 0; y < ml.height(); ++y) {
      for (int x = 0; x < ml.width(); ++x) {
        const int sx = x * f + f / 2, sy = y * f + f / 2;
        if (ml.head().at(x, y) != m.head().at(sx, sy) || ml.body().at(x, y) != m.body().at(sx, sy)) ++partition_bad;
      }
    }

    const SemanticLayout blended = blend_layouts(l1, l2, m);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        const int want = head.contains(l1.at(x, y)) ? l1.at(x, y) : body.contains(l2.at(x, y)) ? l2.at(x, y) : kBackground;
        if (blended.at(x, y) != want) ++layout_bad;
      }
    }

    const std::int64_t h = ml.height(), w = ml.width();
    torch::Tensor zr = torch::randn({1, 4, h, w}, g), zh = torch::randn({1, 4, h, w}, g), zb = torch::randn({1, 4, h, w}, g);
    torch::Tensor got = blend_latents(zr, zh, zb, ml).contiguous();
    auto a = got.accessor<float, 4>();
    auto ar = zr.accessor<float, 4>(), ah = zh.accessor<float, 4>(), ab = zb.accessor<float, 4>();
    for (int c = 0; c < 4; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const float want = ml.head().at(x, y) ? ah[0][c][y][x] : ml.body().at(x, y) ? ab[0][c][y][x] : ar[0][c][y][x];
          if (a[0][c][y][x] != want) ++latent_bad;
        }
      }
    }
  }
  o.require(partition_bad == 0, "partition violations over 1000 layouts at 64x64 and latent resolution: " + F::fmt(partition_bad));
  o.require(layout_bad == 0, "blend_layouts mismatches vs selection oracle: " + F::fmt(layout_bad));
  o.require(latent_bad == 0, "blend_latents mismatches vs selection oracle: " + F::fmt(latent_bad));
}

void augmentation_alignment(Outcome& o) {
  const ClassSet coverable = ClassTaxonomy::neck_group() | ClassTaxonomy::body_group();
  const ClassSet& head = ClassTaxonomy::head_group();
  int cover_bad = 0, idem_bad = 0;
  for (int i = 0; i < 200; ++i) {
    const SemanticLayout target = make_sample(31, static_cast<std::uint64_t>(i), 64).layout;
    const SemanticLayout cover = make_sample(32, static_cast<std::uint64_t>(i), 64).layout;
    const SemanticLayout got = head_cover_augment(target, cover);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        const int want = coverable.contains(target.at(x, y)) && head.contains(cover.at(x, y)) ? kBackground : target.at(x, y);
        if (got.at(x, y) != want) ++cover_bad;
      }
    }
    const SemanticLayout once = remove_neck(target);
    if (remove_neck(once) != once) ++idem_bad;
    for (int c = 0; c < kNumClasses; ++c) {
      if (ClassTaxonomy::neck_group().contains(c) && once.count(c) != 0) ++idem_bad;
    }
  }
  o.require(cover_bad == 0, "head_cover_augment mismatches over 200 pairs: " + F::fmt(cover_bad));
  o.require(idem_bad == 0, "remove_neck idempotence or leftover neck failures: " + F::fmt(idem_bad));

  // 128 px keeps every face fully in frame under shifts of up to 16 columns.
  int align_bad = 0, tried = 0;
  for (int i = 0; i < 6; ++i) {
    const PersonSample p = make_sample(33, static_cast<std::uint64_t>(i), 128);
    for (int k = -16; k <= 16; ++k) {
      const SemanticLayout moved = shift_horizontal(p.layout, k);
      if (moved.count(kFace) != p.layout.count(kFace)) continue;
      ++tried;
      if (neck_align(p.layout, moved, p.nose_y, p.nose_y).delta_w != k) ++align_bad;
      const SemanticLayout head_moved = shift_horizontal(p.layout, -k);
      if (neck_align(head_moved, p.layout, p.nose_y, p.nose_y).delta_w != k) ++align_bad;
    }
  }
  o.require(tried == 6 * 33 && align_bad == 0,
            "neck_align delta_w == k for k in [-16, 16]: " + F::fmt(align_bad) + " misses in " + F::fmt(2 * tried));
}

void layout_generator_suite(Outcome& o) {
  torch::Generator g = make_generator(404);

  torch::Tensor logits = torch::randn({256, 20}, g, f64()) * 3.0;
  double simplex = 0.0;
  bool hard_ok = true;
  for (double tau : {0.25, 1.0, 4.0}) {
    torch::Tensor y = gumbel_softmax(logits, tau, g);
    simplex = std::max(simplex, (y.sum(-1) - 1.0).abs().max().item<double>());
    if ((y < 0).any().item<bool>()) simplex = 1.0;
    torch::Tensor yh = gumbel_softmax(logits, tau, g, true);
    hard_ok = hard_ok && ((yh == 0) | (yh == 1)).all().item<bool>() && (yh.sum(-1) == 1).all().item<bool>();
  }
  o.require(simplex < 1e-12 && hard_ok, "gumbel_softmax simplex error " + F::fmt(simplex) + ", hard samples one-hot");

  const std::int64_t draws = 100000;
  torch::Tensor p = torch::tensor({0.05, 0.1, 0.15, 0.3, 0.4}, f64());
  torch::Tensor counts = gumbel_softmax(p.log().expand({draws, 5}), 1.0, g, true).sum(0);
  double freq = 0.0;
  for (int k = 0; k < 5; ++k) {
    const double pk = p[k].item<double>(), fk = counts[k].item<double>() / static_cast<double>(draws);
    freq = std::max(freq, std::abs(fk - pk) / (4.0 * std::sqrt(pk * (1 - pk) / static_cast<double>(draws))));
  }
  o.require(freq <= 1.0, "hard Gumbel sample frequencies, worst deviation " + F::fmt(freq) + " of the 4 sigma band");

  int compose_bad = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const SemanticLayout in = make_sample(41, static_cast<std::uint64_t>(trial), 32).layout;
    LayoutGenOutput out = split_output(torch::randn({1, 21, 32, 32}, g));
    const SemanticLayout done = compose_output(out, in);
    torch::Tensor arg = out.class_logits[0].argmax(0);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const bool focus = out.focus[0][0][y][x].item<float>() >= 0.5f;
        const int want = focus ? static_cast<int>(arg[y][x].item<std::int64_t>()) : in.at(x, y);
        if (done.at(x, y) != want) ++compose_bad;
      }
    }
  }
  o.require(compose_bad == 0, "compose_output keeps the input outside focus: " + F::fmt(compose_bad) + " mismatches");

  torch::Tensor target = torch::randint(0, kNumClasses, {2, 8, 8}, g).to(torch::kInt64);
  const double ce = layout_ce_loss(torch::zeros({2, kNumClasses, 8, 8}, f64()), target).item<double>();
  o.require(std::abs(ce - std::log(20.0)) <= 1e-6, "CE at uniform logits " + F::fmt(ce) + " vs ln 20");

  torch::Tensor one = torch::ones({2, 1, 4, 4}, f64()), zero = torch::zeros({2, 1, 4, 4}, f64()), half = 0.5 * one;
  const LsganLosses opt_d = lsgan_losses(one, zero), fooled = lsgan_losses(one, one), eq = lsgan_losses(half, half);
  const bool ls = opt_d.d_loss.item<double>() == 0.0 && fooled.g_loss.item<double>() == 0.0 &&
                  eq.d_loss.item<double>() == 0.25 && eq.g_loss.item<double>() == 0.125 &&
                  opt_d.g_loss.item<double>() == 0.5;
  o.require(ls, "LSGAN values at D = (1, 0), (1, 1) and the p_real = p_fake optimum D = 1/2");

  LayoutGenConfig tiny;
  tiny.base_channels = 8;
  tiny.mid_channels = 4;
  LayoutGenerator gen = make_layout_generator(tiny, 2);
  gen->to(torch::kFloat64);
  const PersonSample a = make_sample(5, 0, 32), b = make_sample(5, 1, 32);
  std::vector<SemanticLayout> tgt{a.layout}, in{corrupt_layout(a.layout, b.layout)};
  torch::Tensor x = one_hot_layouts(in).to(torch::kFloat64), idx = layouts_to_indices(tgt);
  auto loss = [&] { return layout_nll(composed_log_probs(run_layout_generator(gen, x), x), idx); };
  gen->zero_grad();
  loss().backward();
  auto params = gen->named_parameters();
  double fd = 0.0;
  int probed = 0;
  const std::size_t stride = std::max<std::size_t>(1, params.size() / 10);
  for (std::size_t pi = 0; pi < params.size() && probed < 10; pi += stride, ++probed) {
    torch::Tensor flat = params[pi].value().data().view({-1});
    const std::int64_t k = static_cast<std::int64_t>(pi * 7919) % flat.numel();
    const double analytic = params[pi].value().grad().view({-1})[k].item<double>();
    const double orig = flat[k].item<double>(), h = 1e-6;
    torch::NoGradGuard ng;
    flat[k] = orig + h;
    const double lp = loss().item<double>();
    flat[k] = orig - h;
    const double lm = loss().item<double>();
    flat[k] = orig;
    const double numeric = (lp - lm) / (2 * h);
    fd = std::max(fd, std::abs(numeric - analytic) / std::max(std::abs(analytic), 1e-6));
  }
  o.require(probed == 10 && fd <= 1e-3, "finite differences on " + F::fmt(probed) + " parameters, max relative error " + F::fmt(fd));
}

void metrics_suite(Outcome& o) {
  std::mt19937_64 rng(505);
  std::vector<Image> a, b;
  std::vector<SemanticLayout> la;
  for (int i = 0; i < 40; ++i) {
    PersonSample p = make_sample(51, static_cast<std::uint64_t>(i), 64);
    a.push_back(p.image);
    la.push_back(p.layout);
    b.push_back(make_sample(52, static_cast<std::uint64_t>(i), 64).image);
  }
  const ToyExtractor ex;
  const double self = fid(a, a, ex);
  o.require(std::abs(self) <= 1e-8, "fid(a, a) = " + F::fmt(self));

  double closed = 0.0;
  for (auto [m1, s1, m2, s2] : std::vector<std::array<double, 4>>{{0, 1, 0, 1}, {1.5, 2, -0.5, 0.5}, {3, 0.25, 3, 4}, {-2, 9, 1, 1}}) {
    FeatureStats x, y;
    x.n = y.n = 10;
    x.mu = Eigen::VectorXd::Constant(1, m1);
    y.mu = Eigen::VectorXd::Constant(1, m2);
    x.sigma = Eigen::MatrixXd::Constant(1, 1, s1);
    y.sigma = Eigen::MatrixXd::Constant(1, 1, s2);
    const double want = (m1 - m2) * (m1 - m2) + s1 + s2 - 2.0 * std::sqrt(s1 * s2);
    closed = std::max(closed, std::abs(frechet_distance(x, y) - want));
  }
  o.require(closed <= 1e-9, "1-D Frechet closed forms, max error " + F::fmt(closed));

  std::vector<SemanticLayout> empty(a.size(), SemanticLayout(64, 64)), full(a.size(), SemanticLayout(64, 64, kUpperClothes));
  const double plain = fid(a, b, ex);
  const double m_empty = mask_fid(a, b, empty, empty, ex), m_full = mask_fid(a, b, full, full, ex);
  o.require(std::abs(m_empty - plain) <= 1e-9 * std::max(1.0, plain) && std::abs(m_full) <= 1e-8,
            "mask_fid: nothing masked equals fid, everything masked gives " + F::fmt(m_full));

  std::vector<Image> ca = a, cb = b;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (int y = 16; y < 48; ++y) {
      for (int x = 16; x < 48; ++x) {
        for (int c = 0; c < 3; ++c) cb[i].at(x, y, c) = ca[i].at(x, y, c);
      }
    }
  }
  const double focal_same = focal_fid(ca, cb, ex);
  o.require(std::abs(focal_same) <= 1e-8 && fid(ca, cb, ex) > 1e-6,
            "focal_fid of sets that agree on the central crop: " + F::fmt(focal_same));

  double ssim_dev = 0.0;
  for (int i = 0; i < 10; ++i) {
    ssim_dev = std::max(ssim_dev, std::abs(masked_ssim(a[i], a[i], region_mask(la[i], ClassTaxonomy::head_group())) - 1.0));
    ssim_dev = std::max(ssim_dev, std::abs(masked_ssim(a[i], a[i], Mask(64, 64, true)) - 1.0));
  }
  o.require(ssim_dev <= 1e-12, "masked_ssim(x, x) - 1 = " + F::fmt(ssim_dev));

  const FeatureStats base = compute_stats(a, ex);
  bool perm = true;
  for (int r = 0; r < 5; ++r) {
    std::vector<Image> shuffled = a;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const FeatureStats s = compute_stats(shuffled, ex);
    perm = perm && s.mu == base.mu && s.sigma == base.sigma;
  }
  o.require(perm, "compute_stats bit-identical under 5 random permutations");
}

}  // namespace hsd::acceptance

#include "torch_doctest.hpp"

#include <cmath>
#include <random>

#include "hsd/corpus.hpp"
#include "hsd/errors.hpp"
#include "hsd/layout_generator.hpp"
#include "hsd/tensor_util.hpp"
#include "test_support.hpp"

using namespace hsd;

namespace {

torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kFloat64); }

LayoutGenConfig tiny() {
  LayoutGenConfig c;
  c.base_channels = 8;
  c.mid_channels = 4;
  return c;
}

SemanticLayout square(int w, int h, int x0, int y0, int side, int cls) {
  SemanticLayout l(w, h);
  for (int y = y0; y < y0 + side; ++y) {
    for (int x = x0; x < x0 + side; ++x) l.set(x, y, cls);
  }
  return l;
}

}  // namespace

TEST_CASE("compose_output: selection by focus") {
  std::mt19937_64 rng(1);
  torch::Generator g = make_generator(2);
  SemanticLayout input = testing::random_layout(rng, 12, 10);
  torch::Tensor logits = torch::randn({1, kNumClasses, 10, 12}, g);
  torch::Tensor argmax = logits[0].argmax(0);

  SemanticLayout zero = compose_output({logits, torch::zeros({1, 1, 10, 12})}, input);
  CHECK(zero == input);

  SemanticLayout ones = compose_output({logits, torch::ones({1, 1, 10, 12})}, input);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 12; ++x) CHECK(ones.at(x, y) == argmax[y][x].item<std::int64_t>());
  }

  torch::Tensor focus = torch::rand({1, 1, 10, 12}, g);
  SemanticLayout mixed = compose_output({logits, focus}, input);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 12; ++x) {
      const bool take = focus[0][0][y][x].item<float>() >= 0.5f;
      CHECK(mixed.at(x, y) == (take ? argmax[y][x].item<std::int64_t>() : input.at(x, y)));
    }
  }
  CHECK_THROWS_AS(compose_output({logits, focus}, SemanticLayout(10, 10)), ShapeError);
}

TEST_CASE("gumbel_softmax: simplex") {
  torch::Generator g = make_generator(3);
  for (double tau : {0.1, 0.5, 1.0, 5.0}) {
    torch::Tensor logits = 3.0 * torch::randn({200, 7}, g, f64());
    torch::Tensor y = gumbel_softmax(logits, tau, g);
    CHECK((y.sum(-1) - 1.0).abs().max().item<double>() < 1e-6);
    CHECK(y.min().item<double>() >= 0.0);
  }
  torch::Tensor y = gumbel_softmax(torch::randn({500, 5}, g, f64()), 1.0, g);
  CHECK(y.min().item<double>() > 0.0);
  CHECK_THROWS_AS(gumbel_softmax(torch::zeros({3}), 0.0, g), ConfigError);
  CHECK_THROWS_AS(gumbel_softmax(torch::zeros({3}), -1.0, g), ConfigError);
}

TEST_CASE("gumbel_softmax: low-temperature frequency matches softmax") {
  torch::Generator g = make_generator(4);
  const int n = 10000;
  torch::Tensor logits = torch::tensor({5.0, 0.0, 0.0}, f64()).expand({n, 3}).contiguous();
  torch::Tensor y = gumbel_softmax(logits, 0.01, g);
  const double p = std::exp(5.0) / (std::exp(5.0) + 2.0);
  const double freq = (y.select(1, 0) > 0.99).to(torch::kFloat64).mean().item<double>();
  CHECK(std::abs(freq - p) < 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("gumbel_softmax: equal logits give uniform argmax") {
  torch::Generator g = make_generator(5);
  const int n = 100000, k = 5;
  torch::Tensor y = gumbel_softmax(torch::zeros({n, k}, f64()), 1.0, g);
  torch::Tensor counts = torch::bincount(y.argmax(1), {}, k).to(torch::kFloat64);
  const double p = 1.0 / k;
  const double sd = std::sqrt(n * p * (1 - p));
  for (int c = 0; c < k; ++c) CHECK(std::abs(counts[c].item<double>() - n * p) < 3.0 * sd);
}

TEST_CASE("gumbel_softmax: straight-through hard sample") {
  torch::Generator g = make_generator(6);
  torch::Tensor logits = torch::randn({4, 6}, g, f64()).requires_grad_(true);
  torch::Tensor noise = sample_gumbel({4, 6}, g, torch::kFloat64);
  torch::Tensor hard = gumbel_softmax_with_noise(logits, noise, 1.0, true);
  torch::Tensor soft = gumbel_softmax_with_noise(logits, noise, 1.0, false);
  CHECK(torch::equal(hard.sum(-1), torch::ones({4}, f64())));
  CHECK(torch::equal(hard.argmax(-1), soft.argmax(-1)));
  CHECK(((hard == 0) | (hard == 1)).all().item<bool>());
  torch::Tensor w = torch::randn({4, 6}, g, f64());
  torch::Tensor gh = torch::autograd::grad({(hard * w).sum()}, {logits})[0];
  torch::Tensor gs = torch::autograd::grad({(soft * w).sum()}, {logits})[0];
  CHECK(torch::allclose(gh, gs, 1e-12, 1e-12));
}

TEST_CASE("gumbel_softmax: gradient matches central differences") {
  torch::Generator g = make_generator(7);
  for (double tau : {0.5, 1.0}) {
    torch::Tensor logits = torch::randn({3, 5}, g, f64());
    torch::Tensor noise = sample_gumbel({3, 5}, g, torch::kFloat64);
    torch::Tensor w = torch::randn({3, 5}, g, f64());
    auto f = [&](const torch::Tensor& l) { return (gumbel_softmax_with_noise(l, noise, tau) * w).sum(); };
    torch::Tensor leaf = logits.clone().requires_grad_(true);
    torch::Tensor grad = torch::autograd::grad({f(leaf)}, {leaf})[0];
    const double h = 1e-6;
    for (std::int64_t i = 0; i < logits.numel(); ++i) {
      torch::Tensor lp = logits.clone(), lm = logits.clone();
      lp.view({-1})[i] += h;
      lm.view({-1})[i] -= h;
      const double numeric = (f(lp).item<double>() - f(lm).item<double>()) / (2 * h);
      const double analytic = grad.view({-1})[i].item<double>();
      CHECK(std::abs(numeric - analytic) <= 1e-4 * std::max(std::abs(analytic), 1e-3));
    }
  }
}

TEST_CASE("layout_ce_loss: analytic values and oracle") {
  torch::Generator g = make_generator(8);
  std::mt19937_64 rng(8);
  std::vector<SemanticLayout> t{testing::random_layout(rng, 6, 5), testing::random_layout(rng, 6, 5)};
  torch::Tensor target = layouts_to_indices(t);
  CHECK(layout_ce_loss(torch::zeros({2, kNumClasses, 5, 6}, f64()), target).item<double>() ==
        doctest::Approx(std::log(20.0)).epsilon(1e-12));
  CHECK(std::abs(layout_ce_loss(torch::zeros({2, kNumClasses, 5, 6}), target).item<float>() - std::log(20.0)) < 1e-6);
  CHECK(layout_ce_loss(100.0 * one_hot_indices(target).to(torch::kFloat64), target).item<double>() < 1e-30);

  torch::Tensor logits = torch::randn({2, kNumClasses, 5, 6}, g, f64());
  torch::Tensor w = torch::rand({2, 5, 6}, g, f64());
  double sum = 0.0, wsum = 0.0, wn = 0.0;
  for (int n = 0; n < 2; ++n) {
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 6; ++x) {
        double mx = -1e300;
        for (int c = 0; c < kNumClasses; ++c) mx = std::max(mx, logits[n][c][y][x].item<double>());
        double z = 0.0;
        for (int c = 0; c < kNumClasses; ++c) z += std::exp(logits[n][c][y][x].item<double>() - mx);
        const double nll = -(logits[n][t[n].at(x, y)][y][x].item<double>() - mx - std::log(z));
        sum += nll;
        wsum += w[n][y][x].item<double>() * nll;
        wn += w[n][y][x].item<double>();
      }
    }
  }
  CHECK(layout_ce_loss(logits, target).item<double>() == doctest::Approx(sum / 60.0).epsilon(1e-12));
  CHECK(layout_ce_loss(logits, target, w).item<double>() == doctest::Approx(wsum / wn).epsilon(1e-12));
  CHECK_THROWS_AS(layout_ce_loss(logits, torch::full({2, 5, 6}, 20, torch::kInt64)), TaxonomyError);
  CHECK_THROWS_AS(layout_ce_loss(logits, torch::full({2, 5, 6}, -1, torch::kInt64)), TaxonomyError);
}

TEST_CASE("composed_log_probs matches the direct formula") {
  torch::Generator g = make_generator(9);
  torch::Tensor raw = torch::randn({2, kNumClasses + 1, 4, 4}, g, f64());
  std::mt19937_64 rng(9);
  std::vector<SemanticLayout> in{testing::random_layout(rng, 4, 4), testing::random_layout(rng, 4, 4)};
  torch::Tensor x = one_hot_layouts(in).to(torch::kFloat64);
  LayoutGenOutput out = split_output(raw);
  torch::Tensor direct = torch::log(out.focus * torch::softmax(out.class_logits, 1) + (1 - out.focus) * x);
  CHECK(torch::allclose(composed_log_probs(out, x), direct, 1e-12, 1e-12));
}

TEST_CASE("lsgan_losses") {
  torch::Tensor one = torch::ones({2, 1, 3, 3}), zero = torch::zeros({2, 1, 3, 3});
  LsganLosses a = lsgan_losses(one, zero);
  CHECK(a.d_loss.item<float>() == 0.0f);
  CHECK(a.g_loss.item<float>() == 0.5f);
  LsganLosses b = lsgan_losses(zero, one);
  CHECK(b.d_loss.item<float>() == 1.0f);
  CHECK(b.g_loss.item<float>() == 0.0f);

  torch::Generator g = make_generator(10);
  torch::Tensor r = torch::randn({3, 1, 4, 4}, g, f64()), f = torch::randn({3, 1, 4, 4}, g, f64());
  double dr = 0, df = 0, gf = 0;
  for (std::int64_t i = 0; i < r.numel(); ++i) {
    const double rv = r.view({-1})[i].item<double>(), fv = f.view({-1})[i].item<double>();
    dr += (rv - 1) * (rv - 1);
    df += fv * fv;
    gf += (fv - 1) * (fv - 1);
  }
  const double n = static_cast<double>(r.numel());
  LsganLosses c = lsgan_losses(r, f);
  CHECK(c.d_loss.item<double>() == doctest::Approx(0.5 * dr / n + 0.5 * df / n).epsilon(1e-12));
  CHECK(c.g_loss.item<double>() == doctest::Approx(0.5 * gf / n).epsilon(1e-12));
}

TEST_CASE("generator: output contract") {
  LayoutGenerator g = make_layout_generator(tiny(), 1);
  torch::NoGradGuard ng;
  PersonSample p = make_sample(3, 0, 32);
  LayoutGenOutput out = run_layout_generator(g, one_hot_layouts(std::span<const SemanticLayout>(&p.layout, 1)));
  CHECK(out.class_logits.sizes() == torch::IntArrayRef({1, kNumClasses, 32, 32}));
  CHECK(out.focus.sizes() == torch::IntArrayRef({1, 1, 32, 32}));
  CHECK(out.focus.min().item<float>() >= 0.0f);
  CHECK(out.focus.max().item<float>() <= 1.0f);
  CHECK(torch::isfinite(out.class_logits).all().item<bool>());
  CHECK_THROWS_AS(g->forward(torch::zeros({1, 3, 32, 32})), ShapeError);
  SemanticLayout done = complete_layout(g, p.layout);
  CHECK(done.width() == 32);
}

TEST_CASE("generator: loss gradient matches central differences on a 10-parameter probe") {
  LayoutGenerator g = make_layout_generator(tiny(), 2);
  g->to(torch::kFloat64);
  PersonSample a = make_sample(5, 0, 32), b = make_sample(5, 1, 32);
  std::vector<SemanticLayout> tgt{a.layout};
  std::vector<SemanticLayout> in{corrupt_layout(a.layout, b.layout)};
  torch::Tensor x = one_hot_layouts(in).to(torch::kFloat64);
  torch::Tensor target = layouts_to_indices(tgt);
  auto loss = [&] { return layout_nll(composed_log_probs(run_layout_generator(g, x), x), target); };
  g->zero_grad();
  loss().backward();

  auto named = g->named_parameters();
  std::vector<std::pair<std::string, std::int64_t>> probe{
      {"stage1.in_proj.conv.weight", 5}, {"stage1.enc0.conv.weight", 17}, {"stage1.bottom.conv.bias", 1},
      {"stage2.dec0.conv.weight", 40},   {"stage3.enc1.conv.weight", 3},  {"dec2.in_proj.conv.weight", 100},
      {"dec1.dec1.conv.weight", 7},      {"dec1.in_proj.norm.weight", 2}, {"head.weight", 11},
      {"head.bias", kNumClasses}};
  int checked = 0;
  for (const auto& [name, idx] : probe) {
    REQUIRE(named.contains(name));
    torch::Tensor flat = named[name].data().view({-1});
    const double analytic = named[name].grad().view({-1})[idx].item<double>();
    const double orig = flat[idx].item<double>();
    const double h = 1e-6;
    torch::NoGradGuard ng;
    flat[idx] = orig + h;
    const double lp = loss().item<double>();
    flat[idx] = orig - h;
    const double lm = loss().item<double>();
    flat[idx] = orig;
    const double numeric = (lp - lm) / (2 * h);
    INFO(name, " analytic ", analytic, " numeric ", numeric);
    CHECK(std::abs(numeric - analytic) <= 1e-3 * std::max(std::abs(analytic), 1e-6));
    ++checked;
  }
  CHECK(checked == 10);
}

TEST_CASE("train_layout_generator: pure CE lowers held-out CE") {
  std::vector<SemanticLayout> train, held;
  for (int i = 0; i < 64; ++i) train.push_back(make_sample(21, i, 32).layout);
  for (int i = 64; i < 80; ++i) held.push_back(make_sample(21, i, 32).layout);
  std::vector<SemanticLayout> held_in;
  for (std::size_t i = 0; i < held.size(); ++i) held_in.push_back(corrupt_layout(held[i], held[(i + 1) % held.size()]));
  torch::Tensor x = one_hot_layouts(held_in);
  torch::Tensor target = layouts_to_indices(held);

  auto held_ce = [&](LayoutGenerator& g) {
    torch::NoGradGuard ng;
    return layout_nll(composed_log_probs(run_layout_generator(g, x), x), target).item<double>();
  };
  LayoutGenerator init = make_layout_generator(tiny(), 4);
  LayoutGenLossWeights w;
  w.lambda2 = 0.0;
  LayoutGenTrainOptions opts;
  opts.steps = 500;
  opts.batch_size = 4;
  opts.seed = 4;
  LayoutGenTrainResult r = train_layout_generator(train, tiny(), w, opts);
  const double before = held_ce(init);
  const double after = held_ce(r.generator);
  INFO("held-out CE before ", before, " after ", after);
  CHECK(after < 0.5 * before);
  for (double d : r.d_losses) CHECK(d == 0.0);
}

TEST_CASE("train_layout_generator: determinism and metadata") {
  std::vector<SemanticLayout> data;
  for (int i = 0; i < 16; ++i) data.push_back(make_sample(22, i, 32).layout);
  LayoutGenTrainOptions opts;
  opts.steps = 15;
  opts.batch_size = 2;
  opts.seed = 9;
  LayoutGenTrainResult a = train_layout_generator(data, tiny(), LayoutGenLossWeights{}, opts);
  LayoutGenTrainResult b = train_layout_generator(data, tiny(), LayoutGenLossWeights{}, opts);
  CHECK(a.total_losses == b.total_losses);
  CHECK(a.d_losses == b.d_losses);
  CHECK(a.d_losses.front() > 0.0);

  Checkpoint ck = Checkpoint::deserialize(layout_gen_checkpoint(a.generator, LayoutGenLossWeights{}, a.meta).serialize());
  CHECK(ck.meta["loss_weights"]["lambda1"].get<double>() == 1.0);
  CHECK(ck.meta["loss_weights"]["lambda2"].get<double>() == 0.2);
  CHECK(ck.meta["training"]["optimizer"]["beta1"].get<double>() == 0.5);
  LayoutGenerator back = layout_gen_from_checkpoint(ck);
  CHECK(complete_layout(back, data[0]) == complete_layout(a.generator, data[0]));

  std::vector<SemanticLayout> none;
  CHECK_THROWS_AS(train_layout_generator(none, tiny(), LayoutGenLossWeights{}, opts), ConfigError);
  LayoutGenLossWeights neg;
  neg.lambda2 = -0.1;
  CHECK_THROWS_AS(train_layout_generator(data, tiny(), neg, opts), ConfigError);
}

TEST_CASE("miou") {
  std::mt19937_64 rng(12);
  SemanticLayout r = testing::random_layout(rng, 16, 16);
  CHECK(miou(r, r) == 1.0);

  SemanticLayout a(8, 8, kHair), b(8, 8, kFace);
  CHECK(miou(a, b) == 0.0);
  CHECK(class_iou(a, b, kHair) == 0.0);
  CHECK(class_iou(a, b, kFace) == 0.0);
  CHECK_FALSE(class_iou(a, b, kSkin).has_value());

  // Squares of side 8 offset by 4 columns: overlap 32, union 96 for the face class;
  // background has 256 - 96 = 160 shared pixels over a union of 256 - 32 = 224.
  SemanticLayout p = square(16, 16, 2, 4, 8, kFace), q = square(16, 16, 6, 4, 8, kFace);
  CHECK(*class_iou(p, q, kFace) == doctest::Approx(32.0 / 96.0));
  CHECK(*class_iou(p, q, kBackground) == doctest::Approx(160.0 / 224.0));
  CHECK(miou(p, q) == doctest::Approx((32.0 / 96.0 + 160.0 / 224.0) / 2));
  CHECK(miou(p, q, ClassSet{kFace}) == doctest::Approx(32.0 / 96.0));
  CHECK(miou(p, q, ClassSet{kSkin}) == 1.0);

  SemanticLayout s = testing::random_layout(rng, 16, 16);
  CHECK(miou(r, s) == miou(s, r));
  // Consistent relabelling (cyclic shift of class ids) leaves the score unchanged.
  SemanticLayout r2 = r, s2 = s;
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      r2.set(x, y, (r.at(x, y) + 7) % kNumClasses);
      s2.set(x, y, (s.at(x, y) + 7) % kNumClasses);
    }
  }
  CHECK(miou(r2, s2) == doctest::Approx(miou(r, s)).epsilon(1e-15));
  CHECK_THROWS_AS(miou(r, SemanticLayout(8, 16)), ShapeError);
}

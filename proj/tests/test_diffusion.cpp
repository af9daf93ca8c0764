#include "torch_doctest.hpp"

#include <cmath>
#include <vector>

#include "hsd/diffusion.hpp"
#include "hsd/errors.hpp"
#include "hsd/tensor_util.hpp"

using namespace hsd;

namespace {

torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kFloat64); }

torch::Tensor randn(std::vector<std::int64_t> shape, torch::Generator& g) {
  return torch::randn(shape, g, f64());
}

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.z_channels = 2;
  c.s_channels = 3;
  c.base_channels = 8;
  c.time_dim = 8;
  return c;
}

}  // namespace

TEST_CASE("schedule: single step and long product") {
  NoiseSchedule one(std::vector<double>{0.5}, 0.5, 0.5, ScheduleKind::kLinear);
  CHECK(one.alpha_bar(0) == 1.0);
  CHECK(one.alpha_bar(1) == doctest::Approx(0.5));
  NoiseSchedule one_b = make_schedule(1, 0.5, 0.5);
  CHECK(one_b.alpha_bar(1) == doctest::Approx(0.5));

  NoiseSchedule s = make_schedule(1000);
  double prod = 1.0;
  for (int i = 0; i < 1000; ++i) prod *= 1.0 - (1e-4 + (2e-2 - 1e-4) * i / 999.0);
  CHECK(s.alpha_bar(1000) == doctest::Approx(prod).epsilon(1e-12));
  CHECK(s.alpha_bar(1000) < 1e-4);
  CHECK(s.beta(1) == doctest::Approx(1e-4));
  CHECK(s.beta(1000) == doctest::Approx(2e-2));
}

TEST_CASE("schedule: monotone and recursive for small T") {
  for (int T : {1, 2, 5, 17, 100}) {
    NoiseSchedule s = make_schedule(T, 1e-3, 0.3);
    CHECK(s.alpha_bar(0) == 1.0);
    for (int t = 1; t <= T; ++t) {
      CHECK(s.beta(t) > 0.0);
      CHECK(s.beta(t) < 1.0);
      CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
      CHECK(s.alpha_bar(t) == doctest::Approx(s.alpha_bar(t - 1) * s.alpha(t)).epsilon(1e-14));
    }
  }
}

TEST_CASE("schedule: invalid ranges") {
  CHECK_THROWS_AS(make_schedule(0), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.1), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.2, 0.1), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.1, 1.0), ConfigError);
  NoiseSchedule s = make_schedule(10);
  CHECK_THROWS_AS(s.beta(0), RangeError);
  CHECK_THROWS_AS(s.alpha_bar(11), RangeError);
}

TEST_CASE("forward_sample: limits and errors") {
  torch::Generator g = make_generator(1);
  NoiseSchedule s = make_schedule(100);
  torch::Tensor z0 = randn({2, 3, 4, 4}, g);
  torch::Tensor eps = randn({2, 3, 4, 4}, g);
  const int t = 37;
  const double ab = s.alpha_bar(t);
  CHECK(torch::allclose(forward_sample(z0, t, torch::zeros_like(z0), s), std::sqrt(ab) * z0));
  CHECK(torch::allclose(forward_sample(torch::zeros_like(z0), t, eps, s), std::sqrt(1 - ab) * eps));
  CHECK_THROWS_AS(forward_sample(z0, 0, eps, s), RangeError);
  CHECK_THROWS_AS(forward_sample(z0, 101, eps, s), RangeError);
  CHECK_THROWS_AS(forward_sample(z0, 5, randn({2, 3, 4, 5}, g), s), ShapeError);
}

TEST_CASE("forward_sample: Monte-Carlo moments") {
  torch::Generator g = make_generator(2);
  NoiseSchedule s = make_schedule(1000);
  const std::int64_t n = 100000;
  torch::Tensor z0 = torch::linspace(-2.0, 2.0, 6, f64());
  for (int t : {10, 300, 900}) {
    torch::Tensor eps = randn({n, 6}, g);
    torch::Tensor x = forward_sample(z0.expand({n, 6}).contiguous(), t, eps, s);
    const double ab = s.alpha_bar(t);
    const double sd = std::sqrt(1 - ab);
    torch::Tensor mean = x.mean(0);
    torch::Tensor var = x.var(0);
    for (int i = 0; i < 6; ++i) {
      CHECK(std::abs(mean[i].item<double>() - std::sqrt(ab) * z0[i].item<double>()) < 4 * sd / std::sqrt(double(n)));
      // Var of the sample variance of a Gaussian is 2 sigma^4 / (n - 1).
      CHECK(std::abs(var[i].item<double>() - (1 - ab)) < 4 * (1 - ab) * std::sqrt(2.0 / (n - 1)));
    }
  }
}

TEST_CASE("forward_sample matches iterated single-step kernel") {
  torch::Generator g = make_generator(3);
  NoiseSchedule s = make_schedule(8, 0.05, 0.3);
  const std::int64_t n = 100000;
  torch::Tensor z0 = torch::tensor({1.5, -0.5, 0.0}, f64());
  torch::Tensor x = z0.expand({n, 3}).contiguous();
  for (int t = 1; t <= s.T(); ++t) x = std::sqrt(s.alpha(t)) * x + std::sqrt(s.beta(t)) * randn({n, 3}, g);
  torch::Tensor y = forward_sample(z0.expand({n, 3}).contiguous(), s.T(), randn({n, 3}, g), s);
  const double sd = std::sqrt(1 - s.alpha_bar(s.T()));
  // Difference of two independent sample means has sd * sqrt(2 / n).
  CHECK((x.mean(0) - y.mean(0)).abs().max().item<double>() < 4 * sd * std::sqrt(2.0 / n));
  CHECK((x.var(0) - y.var(0)).abs().max().item<double>() < 4 * sd * sd * std::sqrt(4.0 / (n - 1)));
}

TEST_CASE("ldm_loss") {
  torch::Generator g = make_generator(4);
  torch::Tensor a = randn({2, 4, 3, 3}, g);
  torch::Tensor b = randn({2, 4, 3, 3}, g);
  CHECK(ldm_loss(a, a).item<double>() == 0.0);
  CHECK(ldm_loss(a + 0.7, a).item<double>() == doctest::Approx(0.49).epsilon(1e-12));
  double sum = 0.0;
  auto pa = a.contiguous();
  auto pb = b.contiguous();
  const double* da = pa.data_ptr<double>();
  const double* db = pb.data_ptr<double>();
  for (std::int64_t i = 0; i < a.numel(); ++i) sum += (da[i] - db[i]) * (da[i] - db[i]);
  CHECK(ldm_loss(a, b).item<double>() == doctest::Approx(sum / a.numel()).epsilon(1e-12));
  CHECK_THROWS_AS(ldm_loss(a, randn({2, 4, 3, 2}, g)), ShapeError);
}

TEST_CASE("ddim_step: exact inversion at every t") {
  torch::Generator g = make_generator(5);
  NoiseSchedule s = make_schedule(1000);
  torch::Tensor z0 = randn({1, 4, 4, 4}, g);
  for (int t = 1; t <= 1000; ++t) {
    torch::Tensor eps = randn({1, 4, 4, 4}, g);
    torch::Tensor zt = forward_sample(z0, t, eps, s);
    torch::Tensor back = ddim_step(zt, eps, t, 0, 0.0, s);
    const double rel = ((back - z0).norm() / z0.norm()).item<double>();
    REQUIRE(rel < 1e-5);
  }
}

TEST_CASE("ddim_step: zero noise prediction rescales") {
  torch::Generator g = make_generator(6);
  NoiseSchedule s = make_schedule(1000);
  torch::Tensor z = randn({1, 2, 3, 3}, g);
  torch::Tensor out = ddim_step(z, torch::zeros_like(z), 500, 480, 0.0, s);
  CHECK(torch::allclose(out, z * std::sqrt(s.alpha_bar(480) / s.alpha_bar(500)), 1e-12, 1e-12));
}

TEST_CASE("ddim_step: scalar transcription oracle at eta 0.5") {
  torch::Generator g = make_generator(7);
  NoiseSchedule s = make_schedule(1000);
  for (auto [t, tp] : std::vector<std::pair<int, int>>{{981, 961}, {500, 100}, {21, 1}, {1, 0}}) {
    torch::Tensor z = randn({12}, g), e = randn({12}, g), r = randn({12}, g);
    torch::Tensor out = ddim_step(z, e, t, tp, 0.5, s, r);
    const double at = s.alpha_bar(t), ap = s.alpha_bar(tp);
    const double sigma = 0.5 * std::sqrt((1 - ap) / (1 - at)) * std::sqrt(1 - at / ap);
    for (int i = 0; i < 12; ++i) {
      const double zi = z[i].item<double>(), ei = e[i].item<double>(), ri = r[i].item<double>();
      const double x0 = (zi - std::sqrt(1 - at) * ei) / std::sqrt(at);
      const double want = std::sqrt(ap) * x0 + std::sqrt(1 - ap - sigma * sigma) * ei + sigma * ri;
      CHECK(std::abs(out[i].item<double>() - want) < 1e-10);
    }
  }
}

TEST_CASE("ddim_step: eta 0 ignores eps_rand; errors") {
  torch::Generator g = make_generator(8);
  NoiseSchedule s = make_schedule(100);
  torch::Tensor z = randn({6}, g), e = randn({6}, g);
  CHECK(torch::equal(ddim_step(z, e, 50, 40, 0.0, s), ddim_step(z, e, 50, 40, 0.0, s, randn({6}, g))));
  CHECK_THROWS_AS(ddim_step(z, e, 40, 40, 0.0, s), RangeError);
  CHECK_THROWS_AS(ddim_step(z, e, 40, 50, 0.0, s), RangeError);
  CHECK_THROWS_AS(ddim_step(z, e, 40, 30, 0.5, s), ShapeError);
  CHECK(ddim_sigma(50, 40, 0.0, s) == 0.0);
}

TEST_CASE("ddim_step: eta 1 matches ancestral posterior variance for adjacent steps") {
  NoiseSchedule s = make_schedule(100);
  for (int t = 2; t <= 100; ++t) {
    const double beta_tilde = (1 - s.alpha_bar(t - 1)) / (1 - s.alpha_bar(t)) * s.beta(t);
    CHECK(ddim_sigma(t, t - 1, 1.0, s) == doctest::Approx(std::sqrt(beta_tilde)).epsilon(1e-12));
  }
}

TEST_CASE("ddim_step: numerical guard") {
  // eta > 1 is the only way to push the direction coefficient negative.
  NoiseSchedule s = make_schedule(10);
  torch::Tensor z = torch::zeros({3}, f64());
  CHECK_THROWS_AS(ddim_step(z, z, 5, 4, 1.5, s, z), RangeError);
}

TEST_CASE("ddim_timesteps") {
  std::vector<int> ts = ddim_timesteps(1000, 50);
  REQUIRE(ts.size() == 50);
  for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
  CHECK(ts.front() <= 1000);
  CHECK(ts.back() == 1);
  std::vector<int> full = ddim_timesteps(7, 7);
  CHECK(full == std::vector<int>({7, 6, 5, 4, 3, 2, 1}));
  std::vector<DdimStep> plan = ddim_plan(1000, 50);
  CHECK(plan.back().t_prev == 0);
  for (std::size_t i = 0; i + 1 < plan.size(); ++i) CHECK(plan[i].t_prev == plan[i + 1].t);
  for (int T : {1, 3, 10, 999}) {
    for (int n = 1; n <= std::min(T, 40); ++n) {
      std::vector<int> v = ddim_timesteps(T, n);
      REQUIRE(v.size() == static_cast<std::size_t>(n));
      CHECK(v.front() <= T);
      CHECK(v.back() >= 1);
      for (std::size_t i = 1; i < v.size(); ++i) CHECK(v[i] < v[i - 1]);
    }
  }
  CHECK_THROWS_AS(ddim_timesteps(10, 11), ConfigError);
  CHECK_THROWS_AS(ddim_timesteps(10, 0), ConfigError);
}

TEST_CASE("denoiser: zero output at init, determinism, shape checks") {
  DenoiserConfig cfg = tiny_config();
  ConditionalUNet net = make_denoiser(cfg, 11);
  torch::Generator g = make_generator(12);
  DenoiserInputs in{torch::randn({2, 2, 8, 8}, g), torch::tensor({5.0f, 700.0f}), torch::randn({2, 3, 8, 8}, g)};
  torch::NoGradGuard ng;
  torch::Tensor out = denoiser_forward(net, in);
  CHECK(out.sizes() == in.z_t.sizes());
  CHECK(out.abs().max().item<float>() == 0.0f);

  ConditionalUNet a = make_denoiser(cfg, 13);
  torch::Generator g2 = make_generator(14);
  init_parameters(*a->out_conv, g2);
  torch::Tensor o1 = denoiser_forward(a, in);
  torch::Tensor o2 = denoiser_forward(a, in);
  CHECK(torch::equal(o1, o2));
  CHECK(o1.abs().max().item<float>() > 0.0f);

  ConditionalUNet b = make_denoiser(cfg, 13);
  torch::Generator g3 = make_generator(14);
  init_parameters(*b->out_conv, g3);
  CHECK(torch::equal(denoiser_forward(b, in), o1));

  CHECK_THROWS_AS(denoiser_forward(a, {torch::randn({2, 3, 8, 8}), in.t, in.s}), ShapeError);
  CHECK_THROWS_AS(denoiser_forward(a, {in.z_t, in.t, torch::randn({2, 4, 8, 8})}), ShapeError);
  CHECK_THROWS_AS(denoiser_forward(a, {in.z_t, in.t, torch::randn({2, 3, 4, 4})}), ShapeError);
  CHECK_THROWS_AS(denoiser_forward(a, {torch::randn({2, 2, 6, 6}), in.t, torch::randn({2, 3, 6, 6})}), ShapeError);
}

TEST_CASE("denoiser: finite-difference gradient of ldm_loss") {
  DenoiserConfig cfg = tiny_config();
  ConditionalUNet net = make_denoiser(cfg, 21);
  torch::Generator g = make_generator(22);
  init_parameters(*net, g);  // includes the output layer, so gradients flow everywhere
  net->to(torch::kFloat64);
  DenoiserInputs in{randn({2, 2, 8, 8}, g), torch::tensor({3.0, 400.0}, f64()), randn({2, 3, 8, 8}, g)};
  torch::Tensor eps = randn({2, 2, 8, 8}, g);

  auto loss = [&] { return ldm_loss(denoiser_forward(net, in), eps); };
  net->zero_grad();
  loss().backward();

  auto named = net->named_parameters();
  int checked = 0;
  for (const char* name : {"in_conv.weight", "enc1.conv1.weight", "mid0.emb_proj.weight", "time_fc1.weight",
                           "dec0.conv2.bias", "out_conv.weight"}) {
    torch::Tensor p = named[name];
    torch::Tensor grad = p.grad().reshape({-1});
    torch::Tensor flat = p.data().view({-1});
    for (std::int64_t idx : {std::int64_t{0}, flat.numel() / 2, flat.numel() - 1}) {
      const double analytic = grad[idx].item<double>();
      if (std::abs(analytic) < 1e-9) continue;
      const double h = 1e-5;
      const double orig = flat[idx].item<double>();
      torch::NoGradGuard ng;
      flat[idx] = orig + h;
      const double lp = loss().item<double>();
      flat[idx] = orig - h;
      const double lm = loss().item<double>();
      flat[idx] = orig;
      const double numeric = (lp - lm) / (2 * h);
      CHECK(std::abs(numeric - analytic) <= 1e-3 * std::max(std::abs(analytic), 1e-6));
      ++checked;
    }
  }
  CHECK(checked >= 10);
}

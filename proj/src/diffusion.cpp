#include "hsd/diffusion.hpp"

#include <cmath>
#include <string>

#include "hsd/errors.hpp"
#include "hsd/tensor_util.hpp"

namespace hsd {

NoiseSchedule::NoiseSchedule(std::vector<double> betas, double beta_start, double beta_end, ScheduleKind kind)
    : betas_(std::move(betas)), beta_start_(beta_start), beta_end_(beta_end), kind_(kind) {
  if (betas_.empty()) throw ConfigError("NoiseSchedule: need at least one step");
  alpha_bar_.resize(betas_.size() + 1);
  alpha_bar_[0] = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    if (!(betas_[i] > 0.0 && betas_[i] < 1.0)) throw ConfigError("NoiseSchedule: beta outside (0, 1)");
    alpha_bar_[i + 1] = alpha_bar_[i] * (1.0 - betas_[i]);
  }
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > T()) throw RangeError("NoiseSchedule::beta: t = " + std::to_string(t) + " outside [1, T]");
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T()) throw RangeError("NoiseSchedule::alpha_bar: t = " + std::to_string(t) + " outside [0, T]");
  return alpha_bar_[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
  if (T < 1) throw ConfigError("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule(std::move(betas), beta_start, beta_end, kind);
}

torch::Tensor forward_sample(const torch::Tensor& z0, int t, const torch::Tensor& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T()) throw RangeError("forward_sample: t = " + std::to_string(t) + " outside [1, T]");
  if (z0.sizes() != eps.sizes()) throw ShapeError("forward_sample: noise shape differs from latent shape");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor ldm_loss(const torch::Tensor& eps_pred, const torch::Tensor& eps_true) {
  if (eps_pred.sizes() != eps_true.sizes()) throw ShapeError("ldm_loss: shape mismatch");
  return (eps_true - eps_pred).pow(2).mean();
}

double ddim_sigma(int t, int t_prev, double eta, const NoiseSchedule& sched) {
  const double ab_t = sched.alpha_bar(t);
  const double ab_p = sched.alpha_bar(t_prev);
  return eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
}

torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps_pred, int t, int t_prev, double eta,
                        const NoiseSchedule& sched, const torch::Tensor& eps_rand) {
  if (t < 1 || t > sched.T()) throw RangeError("ddim_step: t = " + std::to_string(t) + " outside [1, T]");
  if (t_prev < 0 || t_prev >= t) throw RangeError("ddim_step: need 0 <= t_prev < t");
  if (eta < 0.0 || eta > 1.0) throw RangeError("ddim_step: eta outside [0, 1]");
  if (z_t.sizes() != eps_pred.sizes()) throw ShapeError("ddim_step: eps_pred shape differs from z_t");
  const double ab_t = sched.alpha_bar(t);
  const double ab_p = sched.alpha_bar(t_prev);
  const double sigma = ddim_sigma(t, t_prev, eta, sched);
  double dir = 1.0 - ab_p - sigma * sigma;
  if (dir < 0.0) {
    if (dir < -1e-12) throw NumericalError("ddim_step: 1 - abar_prev - sigma^2 < 0");
    dir = 0.0;
  }
  torch::Tensor x0_hat = (z_t - std::sqrt(1.0 - ab_t) * eps_pred) / std::sqrt(ab_t);
  torch::Tensor out = std::sqrt(ab_p) * x0_hat + std::sqrt(dir) * eps_pred;
  if (sigma > 0.0) {
    if (!eps_rand.defined() || eps_rand.sizes() != z_t.sizes()) {
      throw ShapeError("ddim_step: stochastic step needs eps_rand shaped like z_t");
    }
    out = out + sigma * eps_rand;
  }
  return out;
}

std::vector<int> ddim_timesteps(int T, int n_steps) {
  if (T < 1 || n_steps < 1 || n_steps > T) throw ConfigError("ddim_timesteps: need 1 <= n_steps <= T");
  std::vector<int> ts(static_cast<std::size_t>(n_steps));
  for (int i = 0; i < n_steps; ++i) {
    ts[static_cast<std::size_t>(n_steps - 1 - i)] = 1 + static_cast<int>((static_cast<long>(i) * T) / n_steps);
  }
  return ts;
}

std::vector<DdimStep> ddim_plan(int T, int n_steps) {
  const std::vector<int> ts = ddim_timesteps(T, n_steps);
  std::vector<DdimStep> plan;
  plan.reserve(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) plan.push_back({ts[i], i + 1 < ts.size() ? ts[i + 1] : 0});
  return plan;
}

ConditionalUNetImpl::ConditionalUNetImpl(const DenoiserConfig& c) : cfg(c) {
  const std::int64_t ch = cfg.base_channels;
  const std::int64_t emb = 4 * cfg.time_dim;
  in_conv = register_module("in_conv", conv3x3(cfg.z_channels + cfg.s_channels, ch));
  time_fc1 = register_module("time_fc1", torch::nn::Linear(cfg.time_dim, emb));
  time_fc2 = register_module("time_fc2", torch::nn::Linear(emb, emb));
  enc0 = register_module("enc0", ResBlock(ch, ch, emb));
  down0 = register_module("down0", downsample_conv(ch, ch));
  enc1 = register_module("enc1", ResBlock(ch, 2 * ch, emb));
  down1 = register_module("down1", downsample_conv(2 * ch, 2 * ch));
  mid0 = register_module("mid0", ResBlock(2 * ch, 2 * ch, emb));
  mid1 = register_module("mid1", ResBlock(2 * ch, 2 * ch, emb));
  up1 = register_module("up1", Upsample(2 * ch, 2 * ch));
  dec1 = register_module("dec1", ResBlock(4 * ch, 2 * ch, emb));
  up0 = register_module("up0", Upsample(2 * ch, 2 * ch));
  dec0 = register_module("dec0", ResBlock(3 * ch, ch, emb));
  out_norm = register_module("out_norm", torch::nn::GroupNorm(group_count(ch), ch));
  out_conv = register_module("out_conv", conv3x3(ch, cfg.z_channels));
}

torch::Tensor ConditionalUNetImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& s) {
  torch::Tensor emb = time_fc2(torch::silu(time_fc1(timestep_embedding(t, cfg.time_dim).to(z_t.scalar_type()))));
  torch::Tensor h0 = enc0(in_conv(torch::cat({z_t, s}, 1)), emb);
  torch::Tensor h1 = enc1(down0(h0), emb);
  torch::Tensor m = mid1(mid0(down1(h1), emb), emb);
  torch::Tensor d1 = dec1(torch::cat({up1(m), h1}, 1), emb);
  torch::Tensor d0 = dec0(torch::cat({up0(d1), h0}, 1), emb);
  return out_conv(torch::silu(out_norm(d0)));
}

torch::Tensor denoiser_forward(ConditionalUNet& model, const DenoiserInputs& in) {
  const DenoiserConfig& cfg = model->cfg;
  if (in.z_t.dim() != 4 || in.s.dim() != 4) throw ShapeError("denoiser_forward: expected 4-D z_t and s");
  if (in.z_t.size(1) != cfg.z_channels) {
    throw ShapeError("denoiser_forward: z_t has " + std::to_string(in.z_t.size(1)) + " channels, model expects " +
                     std::to_string(cfg.z_channels));
  }
  if (in.s.size(1) != cfg.s_channels) {
    throw ShapeError("denoiser_forward: s has " + std::to_string(in.s.size(1)) + " channels, model expects " +
                     std::to_string(cfg.s_channels));
  }
  if (in.s.size(0) != in.z_t.size(0) || in.s.size(2) != in.z_t.size(2) || in.s.size(3) != in.z_t.size(3)) {
    throw ShapeError("denoiser_forward: condition and latent disagree in batch or spatial size");
  }
  if (in.z_t.size(2) % 4 != 0 || in.z_t.size(3) % 4 != 0) {
    throw ShapeError("denoiser_forward: latent spatial size must be divisible by 4");
  }
  if (in.t.numel() != in.z_t.size(0)) throw ShapeError("denoiser_forward: need one timestep per batch item");
  return model->forward(in.z_t, in.t.reshape({-1}), in.s);
}

ConditionalUNet make_denoiser(const DenoiserConfig& cfg, std::uint64_t seed) {
  ConditionalUNet net(cfg);
  torch::Generator gen = make_generator(seed);
  init_parameters(*net, gen);
  zero_parameters(*net->out_conv);
  return net;
}

}  // namespace hsd

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <utility>
#include <vector>

#include "hsd/nn.hpp"

namespace hsd {

enum class ScheduleKind { kLinear };

/// Variance schedule over timesteps 1..T. alpha_bar is indexed 0..T with
/// alpha_bar(0) == 1, so t = 0 denotes the clean latent.
class NoiseSchedule {
 public:
  NoiseSchedule(std::vector<double> betas, double beta_start, double beta_end, ScheduleKind kind);

  int T() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const;
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }
  ScheduleKind kind() const { return kind_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

 private:
  std::vector<double> betas_;      // betas_[t - 1] = beta_t
  std::vector<double> alpha_bar_;  // size T + 1
  double beta_start_;
  double beta_end_;
  ScheduleKind kind_;
};

/// Linear beta from beta_start to beta_end over T steps. Requires 0 < start <= end < 1 and T >= 1.
NoiseSchedule make_schedule(int T, double beta_start = 1e-4, double beta_end = 2e-2,
                            ScheduleKind kind = ScheduleKind::kLinear);

/// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
torch::Tensor forward_sample(const torch::Tensor& z0, int t, const torch::Tensor& eps, const NoiseSchedule& sched);

/// Mean squared error between true and predicted noise.
torch::Tensor ldm_loss(const torch::Tensor& eps_pred, const torch::Tensor& eps_true);

/// DDIM sigma for the (t -> t_prev) transition.
double ddim_sigma(int t, int t_prev, double eta, const NoiseSchedule& sched);

/// One DDIM update from t to t_prev (< t). `eps_rand` is ignored when the step's sigma is zero.
torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps_pred, int t, int t_prev, double eta,
                        const NoiseSchedule& sched, const torch::Tensor& eps_rand = {});

struct DdimStep {
  int t;
  int t_prev;
};

/// n_steps timesteps evenly strided over 1..T, descending; the last one steps to t_prev = 0.
std::vector<int> ddim_timesteps(int T, int n_steps);
std::vector<DdimStep> ddim_plan(int T, int n_steps);

struct DenoiserConfig {
  std::int64_t z_channels = 4;
  std::int64_t s_channels = 8;
  std::int64_t base_channels = 64;
  std::int64_t time_dim = 64;
};

/// Conditional U-Net noise predictor with two resolution levels. The
/// condition tensor is concatenated to the noisy latent channelwise. The
/// output convolution starts at zero.
struct ConditionalUNetImpl : torch::nn::Module {
  explicit ConditionalUNetImpl(const DenoiserConfig& cfg);
  torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& s);

  DenoiserConfig cfg;
  torch::nn::Conv2d in_conv{nullptr};
  torch::nn::Linear time_fc1{nullptr}, time_fc2{nullptr};
  ResBlock enc0{nullptr}, enc1{nullptr}, mid0{nullptr}, mid1{nullptr}, dec1{nullptr}, dec0{nullptr};
  torch::nn::Conv2d down0{nullptr}, down1{nullptr};
  Upsample up1{nullptr}, up0{nullptr};
  torch::nn::GroupNorm out_norm{nullptr};
  torch::nn::Conv2d out_conv{nullptr};
};
TORCH_MODULE(ConditionalUNet);

struct DenoiserInputs {
  torch::Tensor z_t;  // [N, z_channels, h, w]
  torch::Tensor t;    // [N]
  torch::Tensor s;    // [N, s_channels, h, w]
};

/// Validates channel and spatial agreement, then predicts the noise in z_t.
torch::Tensor denoiser_forward(ConditionalUNet& model, const DenoiserInputs& inputs);

/// Seeded initialisation: uniform fan-in init everywhere, zero output layer.
ConditionalUNet make_denoiser(const DenoiserConfig& cfg, std::uint64_t seed);

}  // namespace hsd

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hsd/checkpoint.hpp"
#include "hsd/codec.hpp"
#include "hsd/diffusion.hpp"

namespace hsd {

struct ScheduleConfig {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
};

nlohmann::json to_json(const ScheduleConfig& s);
ScheduleConfig schedule_config_from_json(const nlohmann::json& j);

/// Semantic-guided latent diffusion model: denoiser plus the layout condition encoder it is trained with.
struct SgLdm {
  DenoiserConfig denoiser_cfg;
  CodecConfig codec_cfg;  // f and s_channels for the condition encoder
  ScheduleConfig schedule_cfg;
  ConditionalUNet denoiser{nullptr};
  ConditionEncoder tau{nullptr};
  NoiseSchedule schedule = make_schedule(1);

  torch::Tensor condition(std::span<const SemanticLayout> layouts) { return encode_condition(tau, layouts); }
  torch::Tensor predict_noise(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& s) {
    return denoiser_forward(denoiser, {z_t, t, s});
  }
  void eval();
};

/// Fresh model. The denoiser's channel counts are taken from `codec_cfg`.
SgLdm make_sgldm(const CodecConfig& codec_cfg, DenoiserConfig denoiser_cfg, const ScheduleConfig& sched, std::uint64_t seed);

struct SgLdmTrainOptions {
  int steps = 3000;
  int batch_size = 16;
  OptimizerParams opt{2e-4, 0.5, 0.999};
  /// Probability that a sample's condition layout is head-cover augmented with another random layout.
  double cover_probability = 0.5;
  int average_window = 100;
  /// Decay of the weight moving average returned as the trained model; 0 returns the raw weights.
  double ema_decay = 0.0;
  std::uint64_t seed = 0;
  std::function<void(int, double)> on_step;
};

struct SgLdmTrainResult {
  SgLdm model;
  std::vector<double> losses;          // per step
  std::vector<double> moving_average;  // trailing mean over `average_window` steps
  nlohmann::json meta;
};

/// Trains the denoiser and condition encoder on frozen codec latents. Throws ConfigError for an empty or
/// mismatched dataset.
SgLdmTrainResult train_sgldm(Codec& codec, std::span<const Image> images, std::span<const SemanticLayout> layouts,
                             const DenoiserConfig& denoiser_cfg, const ScheduleConfig& sched,
                             const SgLdmTrainOptions& opts);

/// Trailing moving average; element i averages losses[max(0, i - window + 1) .. i].
std::vector<double> trailing_average(const std::vector<double>& values, int window);

Checkpoint sgldm_checkpoint(SgLdm& model, const nlohmann::json& training_meta = nlohmann::json::object());
SgLdm sgldm_from_checkpoint(const Checkpoint& ck);

nlohmann::json to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

}  // namespace hsd

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hsd/checkpoint.hpp"
#include "hsd/image.hpp"
#include "hsd/layout.hpp"
#include "hsd/nn.hpp"

namespace hsd {

struct CodecConfig {
  int f = 4;  // power of two
  std::int64_t z_channels = 4;
  std::int64_t s_channels = 8;
  std::int64_t base_channels = 32;

  int levels() const;  // log2(f); throws ConfigError when f is not a power of two
  void validate() const;
};

nlohmann::json to_json(const CodecConfig& c);
CodecConfig codec_config_from_json(const nlohmann::json& j);

struct EncoderImpl : torch::nn::Module {
  explicit EncoderImpl(const CodecConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d in_conv{nullptr};
  std::vector<ResBlock> res;
  std::vector<torch::nn::Conv2d> downs;
  ResBlock mid{nullptr};
  torch::nn::GroupNorm out_norm{nullptr};
  torch::nn::Conv2d out_conv{nullptr};
};
TORCH_MODULE(Encoder);

struct DecoderImpl : torch::nn::Module {
  explicit DecoderImpl(const CodecConfig& cfg);
  torch::Tensor forward(const torch::Tensor& z);

  torch::nn::Conv2d in_conv{nullptr};
  ResBlock mid{nullptr};
  std::vector<Upsample> ups;
  std::vector<ResBlock> res;
  torch::nn::GroupNorm out_norm{nullptr};
  torch::nn::Conv2d out_conv{nullptr};
};
TORCH_MODULE(Decoder);

/// Image autoencoder. `latent_scale` multiplies encoder outputs (and divides
/// decoder inputs) so latents seen by the diffusion model have roughly unit variance.
struct CodecImpl : torch::nn::Module {
  explicit CodecImpl(const CodecConfig& cfg);

  /// [N, 3, H, W] in [0, 1] -> [N, z, H/f, W/f]. Throws ShapeError when H or W is not divisible by f.
  torch::Tensor encode(const torch::Tensor& images);
  /// Latent -> [N, 3, H, W], clamped to [0, 1].
  torch::Tensor decode(const torch::Tensor& z);
  /// Unclamped, unscaled reconstruction used by training.
  torch::Tensor reconstruct_raw(const torch::Tensor& images);

  torch::Tensor encode(const Image& image);
  Image decode_image(const torch::Tensor& z);

  CodecConfig cfg;
  double latent_scale = 1.0;
  Encoder encoder{nullptr};
  Decoder decoder{nullptr};
};
TORCH_MODULE(Codec);

/// tau: one-hot layout -> condition tensor at latent resolution.
struct ConditionEncoderImpl : torch::nn::Module {
  explicit ConditionEncoderImpl(const CodecConfig& cfg);
  /// [N, 20, H, W] one-hot -> [N, s_channels, H/f, W/f].
  torch::Tensor forward(const torch::Tensor& one_hot);

  CodecConfig cfg;
  std::vector<torch::nn::Conv2d> downs;
  torch::nn::Conv2d out_conv{nullptr};
};
TORCH_MODULE(ConditionEncoder);

/// Layouts -> condition tensor. Throws ShapeError for dims not divisible by f.
torch::Tensor encode_condition(ConditionEncoder& tau, std::span<const SemanticLayout> layouts);
torch::Tensor encode_condition(ConditionEncoder& tau, const SemanticLayout& layout);

Codec make_codec(const CodecConfig& cfg, std::uint64_t seed);
ConditionEncoder make_condition_encoder(const CodecConfig& cfg, std::uint64_t seed);

struct CodecTrainOptions {
  int steps = 3000;
  int batch_size = 16;
  OptimizerParams opt{1e-3, 0.5, 0.999};
  std::uint64_t seed = 0;
  /// Called after every step with (step, loss); steps count from 1.
  std::function<void(int, double)> on_step;
};

struct CodecTrainResult {
  Codec codec{nullptr};
  std::vector<double> losses;  // per-step L1 loss
  nlohmann::json meta;         // optimizer, schedule of the run, final loss
};

/// Trains E and D with L1 reconstruction loss on random minibatches. Throws ConfigError for an empty dataset.
CodecTrainResult train_codec(std::span<const Image> dataset, const CodecConfig& cfg, const CodecTrainOptions& opts);

Checkpoint codec_checkpoint(Codec& codec, const nlohmann::json& training_meta = nlohmann::json::object());
Codec codec_from_checkpoint(const Checkpoint& ck);

}  // namespace hsd

#pragma once

#include <torch/torch.h>

#include <cstdint>

#include <json.hpp>

namespace hsd {

/// Adam settings. The momentum defaults are used for every model in the project.
struct OptimizerParams {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
};

nlohmann::json to_json(const OptimizerParams& p);
OptimizerParams optimizer_params_from_json(const nlohmann::json& j, OptimizerParams defaults = {});

torch::optim::Adam make_adam(std::vector<torch::Tensor> params, const OptimizerParams& opt);

int group_count(std::int64_t channels);

/// GroupNorm -> SiLU -> conv3x3, twice, with an optional additive embedding
/// between the halves and a 1x1 projection on the skip path when widths differ.
struct ResBlockImpl : torch::nn::Module {
  ResBlockImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t emb_dim = 0);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb = {});

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::Conv2d skip{nullptr};
  torch::nn::Linear emb_proj{nullptr};
};
TORCH_MODULE(ResBlock);

/// Stride-2 3x3 convolution.
torch::nn::Conv2d downsample_conv(std::int64_t in_ch, std::int64_t out_ch);
torch::nn::Conv2d conv3x3(std::int64_t in_ch, std::int64_t out_ch, std::int64_t dilation = 1);

/// Nearest 2x upsampling followed by a 3x3 convolution.
struct UpsampleImpl : torch::nn::Module {
  UpsampleImpl(std::int64_t in_ch, std::int64_t out_ch);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(Upsample);

/// Sinusoidal embedding of (possibly fractional) timesteps, [N] -> [N, dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim);

}  // namespace hsd

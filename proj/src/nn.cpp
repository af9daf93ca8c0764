#include "hsd/nn.hpp"

#include <cmath>

#include "hsd/errors.hpp"

namespace hsd {

nlohmann::json to_json(const OptimizerParams& p) {
  return {{"name", "adam"}, {"lr", p.lr}, {"beta1", p.beta1}, {"beta2", p.beta2}};
}

OptimizerParams optimizer_params_from_json(const nlohmann::json& j, OptimizerParams d) {
  d.lr = j.value("lr", d.lr);
  d.beta1 = j.value("beta1", d.beta1);
  d.beta2 = j.value("beta2", d.beta2);
  if (!(d.lr > 0.0) || d.beta1 < 0.0 || d.beta1 >= 1.0 || d.beta2 < 0.0 || d.beta2 >= 1.0) {
    throw ConfigError("optimizer: need lr > 0 and betas in [0, 1)");
  }
  return d;
}

torch::optim::Adam make_adam(std::vector<torch::Tensor> params, const OptimizerParams& opt) {
  return torch::optim::Adam(std::move(params), torch::optim::AdamOptions(opt.lr).betas({opt.beta1, opt.beta2}));
}

int group_count(std::int64_t channels) {
  for (int g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

torch::nn::Conv2d conv3x3(std::int64_t in_ch, std::int64_t out_ch, std::int64_t dilation) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 3).padding(dilation).dilation(dilation));
}

torch::nn::Conv2d downsample_conv(std::int64_t in_ch, std::int64_t out_ch) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 3).stride(2).padding(1));
}

ResBlockImpl::ResBlockImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t emb_dim) {
  norm1 = register_module("norm1", torch::nn::GroupNorm(group_count(in_ch), in_ch));
  conv1 = register_module("conv1", conv3x3(in_ch, out_ch));
  norm2 = register_module("norm2", torch::nn::GroupNorm(group_count(out_ch), out_ch));
  conv2 = register_module("conv2", conv3x3(out_ch, out_ch));
  if (in_ch != out_ch) skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 1)));
  if (emb_dim > 0) emb_proj = register_module("emb_proj", torch::nn::Linear(emb_dim, out_ch));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
  torch::Tensor h = conv1(torch::silu(norm1(x)));
  if (emb_proj && emb.defined()) h = h + emb_proj(torch::silu(emb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2(torch::silu(norm2(h)));
  return (skip ? skip(x) : x) + h;
}

UpsampleImpl::UpsampleImpl(std::int64_t in_ch, std::int64_t out_ch) {
  conv = register_module("conv", conv3x3(in_ch, out_ch));
}

torch::Tensor UpsampleImpl::forward(const torch::Tensor& x) {
  namespace F = torch::nn::functional;
  return conv(F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
}

torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim) {
  const std::int64_t half = dim / 2;
  auto opts = torch::TensorOptions().dtype(t.scalar_type() == torch::kFloat64 ? torch::kFloat64 : torch::kFloat32);
  torch::Tensor freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / static_cast<double>(half));
  torch::Tensor args = t.to(opts.dtype()).unsqueeze(1) * freqs.unsqueeze(0);
  torch::Tensor emb = torch::cat({torch::cos(args), torch::sin(args)}, 1);
  if (dim % 2 == 1) emb = torch::cat({emb, torch::zeros({emb.size(0), 1}, opts)}, 1);
  return emb;
}

}  // namespace hsd

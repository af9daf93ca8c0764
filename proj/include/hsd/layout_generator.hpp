#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "hsd/checkpoint.hpp"
#include "hsd/layout.hpp"
#include "hsd/nn.hpp"

namespace hsd {

struct LayoutGenConfig {
  std::int64_t base_channels = 16;  // outer U-Net width at full resolution
  std::int64_t mid_channels = 8;    // inner width of each residual U-block
};

nlohmann::json to_json(const LayoutGenConfig& c);
LayoutGenConfig layout_gen_config_from_json(const nlohmann::json& j);

struct LayoutGenLossWeights {
  double lambda1 = 1.0;  // cross-entropy
  double lambda2 = 0.2;  // adversarial
  void validate() const;
};

/// conv3x3 -> GroupNorm -> ReLU, optionally dilated.
struct ConvNormActImpl : torch::nn::Module {
  ConvNormActImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t dilation = 1);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d conv{nullptr};
  torch::nn::GroupNorm norm{nullptr};
};
TORCH_MODULE(ConvNormAct);

/// Residual U-block: a small U-Net of depth `height` whose output is added to
/// its input projection. With `dilated` set the inner levels use dilation
/// instead of pooling, for blocks that already run at low resolution.
struct RsuBlockImpl : torch::nn::Module {
  RsuBlockImpl(std::int64_t in_ch, std::int64_t mid_ch, std::int64_t out_ch, int height, bool dilated = false);
  torch::Tensor forward(const torch::Tensor& x);

  int height;
  bool dilated;
  ConvNormAct in_proj{nullptr};
  std::vector<ConvNormAct> enc;
  ConvNormAct bottom{nullptr};
  std::vector<ConvNormAct> dec;
};
TORCH_MODULE(RsuBlock);

/// Nested U-Net over one-hot layouts. Output has 21 channels: 20 class logits and a focus logit.
struct LayoutGeneratorImpl : torch::nn::Module {
  explicit LayoutGeneratorImpl(const LayoutGenConfig& cfg);
  torch::Tensor forward(const torch::Tensor& one_hot);

  LayoutGenConfig cfg;
  RsuBlock stage1{nullptr}, stage2{nullptr}, stage3{nullptr}, dec2{nullptr}, dec1{nullptr};
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(LayoutGenerator);

/// Patch-wise classifier over one-hot layouts; returns an [N, 1, h, w] score map.
struct LayoutDiscriminatorImpl : torch::nn::Module {
  explicit LayoutDiscriminatorImpl(std::int64_t width = 32);
  torch::Tensor forward(const torch::Tensor& one_hot);
  torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr};
  torch::nn::GroupNorm n2{nullptr};
};
TORCH_MODULE(LayoutDiscriminator);

struct LayoutGenOutput {
  torch::Tensor class_logits;  // [N, 20, H, W]
  torch::Tensor focus;         // [N, 1, H, W] in [0, 1]
  torch::Tensor focus_logit;   // pre-sigmoid focus, when available
};

LayoutGenOutput split_output(const torch::Tensor& raw);
LayoutGenOutput run_layout_generator(LayoutGenerator& g, const torch::Tensor& one_hot);

/// Hard composition: argmax of the logits where focus >= 0.5, the input class elsewhere.
/// `raw` holds a single sample. Throws ShapeError when dims disagree.
SemanticLayout compose_output(const LayoutGenOutput& raw, const SemanticLayout& input_layout);

/// Runs the generator on one layout and composes the result.
SemanticLayout complete_layout(LayoutGenerator& g, const SemanticLayout& layout);

/// log(m * softmax(logits) + (1 - m) * input_one_hot), the soft composition used in training,
/// evaluated in log space from the focus logit.
torch::Tensor composed_log_probs(const LayoutGenOutput& out, const torch::Tensor& input_one_hot);

/// softmax((logits + g) / tau) along `dim` with caller-supplied Gumbel noise g.
torch::Tensor gumbel_softmax_with_noise(const torch::Tensor& logits, const torch::Tensor& gumbel, double tau,
                                        bool hard = false, std::int64_t dim = -1);
/// Draws Gumbel noise from `gen`. With `hard` set the forward value is one-hot and the gradient is the soft one.
torch::Tensor gumbel_softmax(const torch::Tensor& logits, double tau, torch::Generator& gen, bool hard = false,
                             std::int64_t dim = -1);
torch::Tensor sample_gumbel(at::IntArrayRef shape, torch::Generator& gen, torch::ScalarType dtype = torch::kFloat32);

/// Mean (optionally weighted) per-pixel negative log-likelihood. log_probs: [N, 20, H, W]; target: [N, H, W] int64.
torch::Tensor layout_nll(const torch::Tensor& log_probs, const torch::Tensor& target, const torch::Tensor& weights = {});
/// Cross-entropy between class logits and target indices. Throws TaxonomyError for invalid target classes.
torch::Tensor layout_ce_loss(const torch::Tensor& logits, const torch::Tensor& target, const torch::Tensor& weights = {});

struct LsganLosses {
  torch::Tensor d_loss;
  torch::Tensor g_loss;
};
LsganLosses lsgan_losses(const torch::Tensor& disc_real, const torch::Tensor& disc_fake);

/// The self-supervised corruption: head-cover the target with `cover`, then drop the neck.
SemanticLayout corrupt_layout(const SemanticLayout& target, const SemanticLayout& cover);

struct LayoutGenTrainOptions {
  int steps = 2000;
  int batch_size = 16;
  OptimizerParams opt{1e-3, 0.5, 0.999};
  OptimizerParams disc_opt{2e-4, 0.5, 0.999};
  double gumbel_tau = 1.0;
  std::uint64_t seed = 0;
  std::function<void(int, double)> on_step;  // (step, cross-entropy)
};

struct LayoutGenTrainResult {
  LayoutGenerator generator{nullptr};
  LayoutDiscriminator discriminator{nullptr};
  std::vector<double> ce_losses;
  std::vector<double> total_losses;
  std::vector<double> d_losses;
  nlohmann::json meta;
};

LayoutGenerator make_layout_generator(const LayoutGenConfig& cfg, std::uint64_t seed);

/// Throws ConfigError for an empty dataset or negative weights.
LayoutGenTrainResult train_layout_generator(std::span<const SemanticLayout> dataset, const LayoutGenConfig& cfg,
                                            const LayoutGenLossWeights& weights, const LayoutGenTrainOptions& opts);

/// IoU of one class; nullopt when the class appears in neither layout.
std::optional<double> class_iou(const SemanticLayout& pred, const SemanticLayout& gt, int cls);
/// Mean IoU over classes present in either layout, or over `classes` when given (classes absent from both are
/// skipped). Returns 1 when no class qualifies. Throws ShapeError on dim mismatch.
double miou(const SemanticLayout& pred, const SemanticLayout& gt, std::optional<ClassSet> classes = std::nullopt);

Checkpoint layout_gen_checkpoint(LayoutGenerator& g, const LayoutGenLossWeights& weights,
                                 const nlohmann::json& training_meta = nlohmann::json::object(),
                                 LayoutDiscriminator* disc = nullptr);
LayoutGenerator layout_gen_from_checkpoint(const Checkpoint& ck);

}  // namespace hsd

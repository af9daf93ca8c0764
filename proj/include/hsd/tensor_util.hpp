#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <string>

#include "hsd/checkpoint.hpp"
#include "hsd/image.hpp"
#include "hsd/layout.hpp"

namespace hsd {

/// CPU generator with an explicit seed; all sampling in the library goes through one of these.
torch::Generator make_generator(std::uint64_t seed);

/// [1, 3, H, W] float tensor.
torch::Tensor image_to_tensor(const Image& image);
/// Stacks same-sized images into [N, 3, H, W].
torch::Tensor images_to_tensor(std::span<const Image> images);
/// Inverse of image_to_tensor for a [1, 3, H, W] or [3, H, W] tensor; values are clamped to [0, 1].
Image tensor_to_image(const torch::Tensor& t);

/// [N, H, W] int64 class indices.
torch::Tensor layouts_to_indices(std::span<const SemanticLayout> layouts);
/// [N, 20, H, W] float one-hot encoding.
torch::Tensor one_hot_layouts(std::span<const SemanticLayout> layouts);
/// One-hot from an index tensor; throws TaxonomyError for indices outside the taxonomy.
torch::Tensor one_hot_indices(const torch::Tensor& indices);
SemanticLayout indices_to_layout(const torch::Tensor& indices);

/// [1, 1, H, W] float mask.
torch::Tensor mask_to_tensor(const Mask& mask);

/// PyTorch-default uniform init (bound 1/sqrt(fan_in)) for every Conv2d and Linear, drawn from `gen`.
void init_parameters(torch::nn::Module& module, torch::Generator& gen);
void zero_parameters(torch::nn::Module& module);

/// Parameters (and buffers) of `module` as float32 records named `prefix + name`.
void export_module(const torch::nn::Module& module, Checkpoint& ck, const std::string& prefix);
/// Loads parameters by name; throws ShapeError on shape mismatch and IoError when a tensor is missing.
void import_module(torch::nn::Module& module, const Checkpoint& ck, const std::string& prefix);

TensorRecord tensor_to_record(const std::string& name, const torch::Tensor& t);
torch::Tensor record_to_tensor(const TensorRecord& r);

std::int64_t parameter_count(const torch::nn::Module& module);

}  // namespace hsd

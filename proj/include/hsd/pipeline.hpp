#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "hsd/codec.hpp"
#include "hsd/image.hpp"
#include "hsd/layout.hpp"
#include "hsd/layout_generator.hpp"
#include "hsd/sgldm.hpp"

namespace hsd {

struct SwapModels {
  Codec codec{nullptr};
  SgLdm ldm;
  LayoutGenerator layout_gen{nullptr};
};

/// One step of progressive fusion, reported before the denoiser runs.
struct FusionStep {
  int t = 0;
  int t_prev = 0;
  const torch::Tensor* blended = nullptr;             // latent fed to the denoiser
  const std::vector<torch::Tensor>* noised = nullptr;  // forward-noised source latents at t
  const std::vector<torch::Tensor>* masks = nullptr;   // [1, 1, h, w] bool, one per source
};

struct SwapConfig {
  int ddim_steps = 50;
  double eta = 0.0;
  std::uint64_t seed = 0;
  bool align_neck = true;
  int image_size = 64;  // expected input size; 0 accepts any size divisible by f
  std::function<void(const FusionStep&)> on_step;  // optional trace hook

  void validate(const NoiseSchedule& sched) const;
};

nlohmann::json to_json(const SwapConfig& c);
SwapConfig swap_config_from_json(const nlohmann::json& j);

struct SwapSource {
  Image image;
  SemanticLayout layout;
  std::optional<double> nose_y;
};

struct SwapResult {
  Image image;
  SemanticLayout blended_layout;
  SemanticLayout completed_layout;
  int delta_w = 0;
  std::uint64_t seed = 0;
};

/// Three-way per-element selection: head where masks.head(), body where masks.body(), z_rand elsewhere.
/// Latents are [N, C, h, w] with h, w equal to the mask dims.
torch::Tensor blend_latents(const torch::Tensor& z_rand, const torch::Tensor& z_head, const torch::Tensor& z_body,
                            const RegionMaskSet& masks);

/// Head of `head` onto the body of `body`.
SwapResult swap_heads(const SwapSource& head, const SwapSource& body, SwapModels& models, const SwapConfig& cfg);

/// Regions are given as (source index, class group). Sources are 1-based, as in the text: 1 = first source.
struct ReplacementSpec {
  std::vector<std::pair<int, ClassSet>> preserve_regions;
  std::vector<ClassSet> resample_regions;
  /// Source whose layout supplies the resampled classes of the condition when there are two sources.
  int layout_source = 2;

  /// Throws SpecError for out-of-range sources or a class group that is both preserved and resampled.
  void validate(std::size_t num_sources) const;
};

/// Fake head: resample head and neck, keep the body.
ReplacementSpec fake_head_spec();
/// Keeps every class of source 1.
ReplacementSpec preserve_all_spec();
/// Head of source 1, clothes of source 2, skin and limbs resampled.
ReplacementSpec cross_skin_tone_spec();

/// Preserved regions follow their forward-noised source latents at every step; everything else evolves
/// from the random latent. With a single source the condition is that source's layout; with two, the
/// preserved classes are blended (earlier regions win), resampled classes come from `layout_source`,
/// and the layout generator completes the result.
SwapResult replace_regions(const std::vector<SwapSource>& sources, const ReplacementSpec& spec, SwapModels& models,
                           const SwapConfig& cfg);
SwapResult replace_regions(const SwapSource& x, const ReplacementSpec& spec, SwapModels& models, const SwapConfig& cfg);

/// Constructs the condition layout replace_regions would use, without sampling.
SemanticLayout replacement_condition(const std::vector<SwapSource>& sources, const ReplacementSpec& spec,
                                     LayoutGenerator& layout_gen, SemanticLayout* blended = nullptr);

}  // namespace hsd

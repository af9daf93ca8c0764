#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsd/codec.hpp"
#include "hsd/image.hpp"
#include "hsd/layout_generator.hpp"
#include "hsd/pipeline.hpp"
#include "hsd/sgldm.hpp"

namespace hsd {

inline constexpr int kRunConfigVersion = 1;

struct TrainLoopConfig {
  int steps = 0;
  int batch_size = 0;
  OptimizerParams opt;
};

/// Everything a run needs besides the corpus. Serialized as JSON with a `version` field.
struct RunConfig {
  int version = kRunConfigVersion;
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string checkpoint_dir = "checkpoints";
  std::string output_dir = "outputs";

  CodecConfig codec;
  TrainLoopConfig codec_train{10000, 8, {1e-3, 0.5, 0.999}};
  DenoiserConfig denoiser;
  ScheduleConfig schedule;
  TrainLoopConfig ldm_train{3000, 16, {2e-4, 0.5, 0.999}};
  double cover_probability = 0.5;
  LayoutGenConfig layout_gen;
  TrainLoopConfig layout_train{1000, 8, {1e-3, 0.5, 0.999}};
  LayoutGenLossWeights layout_weights;
  SwapConfig swap;

  void validate() const;
};

/// Effective config, including the list of values that are desk-scale defaults rather than published settings.
nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults. Throws ConfigError for unknown versions or invalid values.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// 64-bit FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

struct EvalReport {
  std::map<std::string, double> metrics;
  std::map<std::string, long> counts;
  std::string extractor_id;
  std::string embedder_id;
  std::string config_hash;

  nlohmann::json to_json() const;
};

struct EvalInputs {
  std::vector<Image> results;
  std::vector<Image> refs;
  std::vector<SemanticLayout> result_layouts;  // may be empty: Mask-FID and masked SSIM are then skipped
  std::vector<SemanticLayout> ref_layouts;
};

/// FID, Mask-FID, Focal-FID, plus masked SSIM (head / body, masks from the result layouts) and identity
/// similarity between result i and reference i when the sets pair up one to one.
EvalReport evaluate(const EvalInputs& in, const nlohmann::json& config);

struct GridTriple {
  Image head;
  Image body;
  Image result;
};

/// Rows are triples, columns head / body / result, no padding. Throws ConfigError for no triples and
/// ShapeError when sizes differ.
Image make_grid(const std::vector<GridTriple>& triples);

/// CLI entry point. Returns 0 on success, 2 for usage and config errors, 1 for runtime failures.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hsd

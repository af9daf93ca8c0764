#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "hsd/image.hpp"
#include "hsd/layout.hpp"

namespace hsd {

using Rgb = std::array<float, 3>;

/// Designated colour of every class. Rendered pixels stay within
/// kFamilyRadius (per channel) of their class colour; class colours are
/// pairwise at least 0.4 apart, so nearest-colour decoding is exact.
const std::array<Rgb, kNumClasses>& class_colors();
inline constexpr float kJitterRadius = 0.06f;
inline constexpr float kTextureAmplitude = 0.02f;

struct PersonParams {
  // Geometry in pixels at the reference size of 64; render_person scales to the target size.
  int head_radius = 9;
  int neck_width = 8;
  int neck_length = 5;
  int shoulder_width = 40;
  int torso_height = 30;
  int arm_width = 5;
  int sleeve_length = 6;
  int face_offset_x = 0;
  int long_hair_length = 0;  // 0: short hair
  bool has_hat = false;
  bool has_sunglasses = false;
  bool wears_coat = false;
  // Realised colours.
  Rgb skin_tone{};  // face colour; neck and arms share its offset from the face family
  Rgb hair_color{};
  Rgb clothes_color{};
  Rgb hat_color{};
  Rgb background_color{};
  std::uint64_t texture_seed = 0;
};

struct CorpusOptions {
  double hat_probability = 0.25;
  double long_hair_probability = 0.4;
  double sunglasses_probability = 0.15;
  double coat_probability = 0.3;
  int max_face_offset = 8;
};

struct PersonSample {
  Image image;
  SemanticLayout layout;
  double nose_y = 0.0;
  PersonParams params;
};

/// Draws parameters that keep every part in frame at any size >= 32.
PersonParams sample_params(std::mt19937_64& rng, const CorpusOptions& options = {});

/// Throws ParamsError for out-of-frame geometry, ShapeError unless size % 4 == 0.
PersonSample render_person(const PersonParams& params, int size);

/// The sample with the given index; its RNG stream derives from (seed, index) only.
PersonSample make_sample(std::uint64_t seed, std::uint64_t index, int size, const CorpusOptions& options = {});

/// Writes images/%06d.png, layouts/%06d.png, meta/%06d.json and manifest.json.
void generate_corpus(const std::filesystem::path& dir, int n, std::uint64_t seed, int size,
                     const CorpusOptions& options = {});

struct CorpusEntry {
  Image image;
  SemanticLayout layout;
  std::optional<double> nose_y;
};

/// Reads a directory written by generate_corpus (or following the same layout).
std::vector<CorpusEntry> load_corpus(const std::filesystem::path& dir);

/// Nearest-class-colour decoding of a rendered image.
SemanticLayout decode_colors(const Image& image);

}  // namespace hsd

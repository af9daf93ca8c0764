#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "hsd/image.hpp"
#include "hsd/taxonomy.hpp"

namespace hsd {

/// Per-pixel class-index map. Every cell is a valid taxonomy index.
class SemanticLayout {
 public:
  SemanticLayout() = default;
  SemanticLayout(int width, int height, int fill = kBackground);
  /// Throws TaxonomyError if any cell is >= kNumClasses.
  SemanticLayout(int width, int height, std::vector<std::uint8_t> cells);

  int width() const { return width_; }
  int height() const { return height_; }

  int at(int x, int y) const { return cells_[index(x, y)]; }
  void set(int x, int y, int cls);

  const std::vector<std::uint8_t>& cells() const { return cells_; }
  /// Number of pixels labelled `cls`.
  int count(int cls) const;

  bool operator==(const SemanticLayout&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> cells_;
};

/// {0,1}-valued mask.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height, bool fill = false);

  int width() const { return width_; }
  int height() const { return height_; }
  bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool v) { bits_[index(x, y)] = v ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  int count() const;
  bool any() const { return count() > 0; }

  Mask operator|(const Mask& other) const;
  Mask operator&(const Mask& other) const;
  Mask operator~() const;
  bool operator==(const Mask&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Head / body / rest masks that partition the image plane.
class RegionMaskSet {
 public:
  /// Validating constructor; throws InvariantError unless head + body + rest == 1 everywhere.
  RegionMaskSet(Mask head, Mask body, Mask rest);

  /// Builds the partition from possibly overlapping head and body masks.
  /// Head wins where both are set; rest is the complement.
  static RegionMaskSet from_head_body(const Mask& head, const Mask& body);

  const Mask& head() const { return head_; }
  const Mask& body() const { return body_; }
  const Mask& rest() const { return rest_; }
  int width() const { return head_.width(); }
  int height() const { return head_.height(); }

  /// Nearest-neighbour subsampling of all three masks by factor f.
  RegionMaskSet downsample(int f) const;

 private:
  Mask head_;
  Mask body_;
  Mask rest_;
};

struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
};

struct NeckAlignment {
  int delta_w = 0;  // positive: move the head source to the right
  PixelPoint head_center;
  PixelPoint body_center;
};

Mask region_mask(const SemanticLayout& layout, const ClassSet& group);

SemanticLayout blend_layouts(const SemanticLayout& l1, const SemanticLayout& l2, const RegionMaskSet& masks);

/// Pixels of `target` in the neck or body groups that fall under the head region of `cover` become background.
SemanticLayout head_cover_augment(const SemanticLayout& target, const SemanticLayout& cover);

SemanticLayout remove_neck(const SemanticLayout& layout);

/// Centroid of the face pixels strictly below `nose_y`. Without a nose row the
/// vertical midpoint of the face bounding box is used. Falls back to the full
/// face centroid when nothing lies below the nose row.
PixelPoint lower_face_center(const SemanticLayout& layout, std::optional<double> nose_y = std::nullopt);

NeckAlignment neck_align(const SemanticLayout& head_src, const SemanticLayout& body_src,
                         std::optional<double> nose_y_head = std::nullopt,
                         std::optional<double> nose_y_body = std::nullopt);

/// Translate along x; vacated columns get `fill`.
SemanticLayout shift_horizontal(const SemanticLayout& layout, int delta_w, int fill = kBackground);
Image shift_horizontal(const Image& image, int delta_w, float fill = 0.0f);

SemanticLayout resize_nearest(const SemanticLayout& layout, int out_w, int out_h);

Mask downsample_mask(const Mask& mask, int f);

/// Rounds half away from zero.
int round_half_away(double v);

/// Layout PNG: 8-bit palette image whose pixel value is the class index.
/// Loading also accepts 8-bit grayscale.
SemanticLayout load_layout_png(const std::filesystem::path& path);
void save_layout_png(const SemanticLayout& layout, const std::filesystem::path& path);

}  // namespace hsd

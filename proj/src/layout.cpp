#include "hsd/layout.hpp"

#include <cmath>
#include <string>

#include "hsd/errors.hpp"

namespace hsd {

namespace {

void require_same_dims(int w1, int h1, int w2, int h2, const char* what) {
  if (w1 != w2 || h1 != h2) {
    throw ShapeError(std::string(what) + ": dimension mismatch " + std::to_string(w1) + "x" + std::to_string(h1) +
                     " vs " + std::to_string(w2) + "x" + std::to_string(h2));
  }
}

void require_positive_dims(int w, int h, const char* what) {
  if (w < 0 || h < 0) throw ShapeError(std::string(what) + ": negative dimensions");
}

}  // namespace

SemanticLayout::SemanticLayout(int width, int height, int fill) : width_(width), height_(height) {
  require_positive_dims(width, height, "SemanticLayout");
  if (fill < 0 || fill >= kNumClasses) throw TaxonomyError("fill class " + std::to_string(fill) + " invalid");
  cells_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), static_cast<std::uint8_t>(fill));
}

SemanticLayout::SemanticLayout(int width, int height, std::vector<std::uint8_t> cells)
    : width_(width), height_(height), cells_(std::move(cells)) {
  require_positive_dims(width, height, "SemanticLayout");
  if (cells_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw ShapeError("SemanticLayout: cell count does not match dimensions");
  }
  for (auto c : cells_) {
    if (c >= kNumClasses) throw TaxonomyError("layout cell " + std::to_string(c) + " outside taxonomy");
  }
}

void SemanticLayout::set(int x, int y, int cls) {
  if (cls < 0 || cls >= kNumClasses) throw TaxonomyError("class " + std::to_string(cls) + " outside taxonomy");
  cells_[index(x, y)] = static_cast<std::uint8_t>(cls);
}

int SemanticLayout::count(int cls) const {
  int n = 0;
  for (auto c : cells_) n += (c == cls);
  return n;
}

Mask::Mask(int width, int height, bool fill) : width_(width), height_(height) {
  require_positive_dims(width, height, "Mask");
  bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill ? 1 : 0);
}

int Mask::count() const {
  int n = 0;
  for (auto b : bits_) n += b;
  return n;
}

Mask Mask::operator|(const Mask& other) const {
  require_same_dims(width_, height_, other.width_, other.height_, "Mask|");
  Mask m = *this;
  for (std::size_t i = 0; i < bits_.size(); ++i) m.bits_[i] = bits_[i] | other.bits_[i];
  return m;
}

Mask Mask::operator&(const Mask& other) const {
  require_same_dims(width_, height_, other.width_, other.height_, "Mask&");
  Mask m = *this;
  for (std::size_t i = 0; i < bits_.size(); ++i) m.bits_[i] = bits_[i] & other.bits_[i];
  return m;
}

Mask Mask::operator~() const {
  Mask m = *this;
  for (auto& b : m.bits_) b = b ? 0 : 1;
  return m;
}

RegionMaskSet::RegionMaskSet(Mask head, Mask body, Mask rest)
    : head_(std::move(head)), body_(std::move(body)), rest_(std::move(rest)) {
  require_same_dims(head_.width(), head_.height(), body_.width(), body_.height(), "RegionMaskSet");
  require_same_dims(head_.width(), head_.height(), rest_.width(), rest_.height(), "RegionMaskSet");
  const auto& h = head_.bits();
  const auto& b = body_.bits();
  const auto& r = rest_.bits();
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h[i] + b[i] + r[i] != 1) {
      throw InvariantError("RegionMaskSet: masks do not partition the plane at cell " + std::to_string(i));
    }
  }
}

RegionMaskSet RegionMaskSet::from_head_body(const Mask& head, const Mask& body) {
  require_same_dims(head.width(), head.height(), body.width(), body.height(), "RegionMaskSet::from_head_body");
  Mask b = body & ~head;
  Mask r = ~(head | b);
  return RegionMaskSet(head, std::move(b), std::move(r));
}

RegionMaskSet RegionMaskSet::downsample(int f) const {
  return RegionMaskSet(downsample_mask(head_, f), downsample_mask(body_, f), downsample_mask(rest_, f));
}

Mask region_mask(const SemanticLayout& layout, const ClassSet& group) {
  Mask m(layout.width(), layout.height());
  for (int y = 0; y < layout.height(); ++y) {
    for (int x = 0; x < layout.width(); ++x) {
      if (group.contains(layout.at(x, y))) m.set(x, y, true);
    }
  }
  return m;
}

SemanticLayout blend_layouts(const SemanticLayout& l1, const SemanticLayout& l2, const RegionMaskSet& masks) {
  require_same_dims(l1.width(), l1.height(), l2.width(), l2.height(), "blend_layouts");
  require_same_dims(l1.width(), l1.height(), masks.width(), masks.height(), "blend_layouts");
  SemanticLayout out(l1.width(), l1.height());
  for (int y = 0; y < l1.height(); ++y) {
    for (int x = 0; x < l1.width(); ++x) {
      if (masks.head().at(x, y)) {
        out.set(x, y, l1.at(x, y));
      } else if (masks.body().at(x, y)) {
        out.set(x, y, l2.at(x, y));
      }
    }
  }
  return out;
}

SemanticLayout head_cover_augment(const SemanticLayout& target, const SemanticLayout& cover) {
  require_same_dims(target.width(), target.height(), cover.width(), cover.height(), "head_cover_augment");
  const ClassSet coverable = ClassTaxonomy::neck_group() | ClassTaxonomy::body_group();
  const ClassSet& head = ClassTaxonomy::head_group();
  SemanticLayout out = target;
  for (int y = 0; y < target.height(); ++y) {
    for (int x = 0; x < target.width(); ++x) {
      if (coverable.contains(target.at(x, y)) && head.contains(cover.at(x, y))) out.set(x, y, kBackground);
    }
  }
  return out;
}

SemanticLayout remove_neck(const SemanticLayout& layout) {
  const ClassSet& neck = ClassTaxonomy::neck_group();
  SemanticLayout out = layout;
  for (int y = 0; y < layout.height(); ++y) {
    for (int x = 0; x < layout.width(); ++x) {
      if (neck.contains(layout.at(x, y))) out.set(x, y, kBackground);
    }
  }
  return out;
}

PixelPoint lower_face_center(const SemanticLayout& layout, std::optional<double> nose_y) {
  int ymin = layout.height();
  int ymax = -1;
  double sx = 0.0, sy = 0.0;
  long n = 0;
  for (int y = 0; y < layout.height(); ++y) {
    for (int x = 0; x < layout.width(); ++x) {
      if (layout.at(x, y) != kFace) continue;
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
      sx += x;
      sy += y;
      ++n;
    }
  }
  if (n == 0) throw EmptyRegionError("lower_face_center: layout has no face pixels");
  const double cut = nose_y.value_or(0.5 * (ymin + ymax));

  double lx = 0.0, ly = 0.0;
  long ln = 0;
  for (int y = 0; y < layout.height(); ++y) {
    if (static_cast<double>(y) <= cut) continue;
    for (int x = 0; x < layout.width(); ++x) {
      if (layout.at(x, y) != kFace) continue;
      lx += x;
      ly += y;
      ++ln;
    }
  }
  if (ln == 0) return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
  return {lx / static_cast<double>(ln), ly / static_cast<double>(ln)};
}

int round_half_away(double v) { return static_cast<int>(std::round(v)); }

NeckAlignment neck_align(const SemanticLayout& head_src, const SemanticLayout& body_src,
                         std::optional<double> nose_y_head, std::optional<double> nose_y_body) {
  NeckAlignment a;
  a.head_center = lower_face_center(head_src, nose_y_head);
  a.body_center = lower_face_center(body_src, nose_y_body);
  a.delta_w = round_half_away(a.body_center.x - a.head_center.x);
  return a;
}

namespace {

void check_shift(int delta_w, int width) {
  if (std::abs(delta_w) >= width && width > 0) {
    throw RangeError("shift_horizontal: |delta_w| = " + std::to_string(std::abs(delta_w)) + " >= width " +
                     std::to_string(width));
  }
}

}  // namespace

SemanticLayout shift_horizontal(const SemanticLayout& layout, int delta_w, int fill) {
  check_shift(delta_w, layout.width());
  SemanticLayout out(layout.width(), layout.height(), fill);
  for (int y = 0; y < layout.height(); ++y) {
    for (int x = 0; x < layout.width(); ++x) {
      const int src = x - delta_w;
      if (src >= 0 && src < layout.width()) out.set(x, y, layout.at(src, y));
    }
  }
  return out;
}

Image shift_horizontal(const Image& image, int delta_w, float fill) {
  check_shift(delta_w, image.width());
  Image out(image.width(), image.height(), fill);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const int src = x - delta_w;
      if (src < 0 || src >= image.width()) continue;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(src, y, c);
    }
  }
  return out;
}

SemanticLayout resize_nearest(const SemanticLayout& layout, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw RangeError("resize_nearest: target dimensions must be positive");
  if (out_w == layout.width() && out_h == layout.height()) return layout;
  SemanticLayout out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const int sy = static_cast<int>((static_cast<long>(y) * layout.height()) / out_h);
    for (int x = 0; x < out_w; ++x) {
      const int sx = static_cast<int>((static_cast<long>(x) * layout.width()) / out_w);
      out.set(x, y, layout.at(sx, sy));
    }
  }
  return out;
}

Mask downsample_mask(const Mask& mask, int f) {
  if (f < 1) throw RangeError("downsample_mask: factor must be >= 1");
  if (mask.width() % f != 0 || mask.height() % f != 0) {
    throw ShapeError("downsample_mask: " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                     " not divisible by " + std::to_string(f));
  }
  // Sample the cell centre so that all masks of a partition pick the same source pixel.
  Mask out(mask.width() / f, mask.height() / f);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) out.set(x, y, mask.at(x * f + f / 2, y * f + f / 2));
  }
  return out;
}

}  // namespace hsd

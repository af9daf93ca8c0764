#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace hsd {

/// Interleaved RGB image with channel values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, float fill = 0.0f);
  Image(int width, int height, std::vector<float> rgb);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  float at(int x, int y, int c) const { return rgb_[index(x, y, c)]; }
  float& at(int x, int y, int c) { return rgb_[index(x, y, c)]; }

  const std::vector<float>& data() const { return rgb_; }
  std::vector<float>& data() { return rgb_; }

  /// Sub-image [x0, x0 + w) x [y0, y0 + h).
  Image crop(int x0, int y0, int w, int h) const;

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) * 3 +
           static_cast<std::size_t>(c);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> rgb_;
};

/// 8-bit RGB PNG. Values are rounded to the nearest of 256 levels on write.
Image load_png(const std::filesystem::path& path);
void save_png(const Image& image, const std::filesystem::path& path);

/// PSNR in dB for images in [0, 1]; infinity for identical inputs.
double psnr(const Image& a, const Image& b);

}  // namespace hsd

#include "hsd/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

#include "hsd/corpus.hpp"
#include "hsd/errors.hpp"
#include "hsd/layout.hpp"

namespace hsd {

Image::Image(int width, int height, float fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw ShapeError("Image: negative dimensions");
  rgb_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3, fill);
}

Image::Image(int width, int height, std::vector<float> rgb) : width_(width), height_(height), rgb_(std::move(rgb)) {
  if (width < 0 || height < 0) throw ShapeError("Image: negative dimensions");
  if (rgb_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3) {
    throw ShapeError("Image: buffer size does not match dimensions");
  }
}

Image Image::crop(int x0, int y0, int w, int h) const {
  if (x0 < 0 || y0 < 0 || w < 0 || h < 0 || x0 + w > width_ || y0 + h > height_) {
    throw ShapeError("Image::crop: window outside image");
  }
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = at(x0 + x, y0 + y, c);
    }
  }
  return out;
}

double psnr(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw ShapeError("psnr: dimension mismatch");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(a.data().size());
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  int color_type = 0;
  std::vector<std::uint8_t> pixels;  // one byte per channel, rows packed
  int channels = 0;
};

// Reads an 8-bit PNG. When keep_indices is set, palette images return raw indices.
DecodedPng read_png(const std::filesystem::path& path, bool keep_indices) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng: cannot create info struct");
  }
  DecodedPng out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng: failed to decode '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (out.color_type == PNG_COLOR_TYPE_PALETTE) {
    if (bit_depth < 8) png_set_packing(png);
    if (!keep_indices) png_set_palette_to_rgb(png);
  } else if (bit_depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (!keep_indices && (out.color_type == PNG_COLOR_TYPE_GRAY || out.color_type == PNG_COLOR_TYPE_GRAY_ALPHA)) {
    png_set_gray_to_rgb(png);
  }
  if (!keep_indices) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.pixels.resize(stride * static_cast<std::size_t>(out.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.pixels.data() + stride * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, int width, int height, int color_type,
               const std::vector<std::uint8_t>& pixels, int channels, const std::vector<png_color>* palette) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng: cannot create info struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng: failed to encode '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (palette) png_set_PLTE(png, info, palette->data(), static_cast<int>(palette->size()));
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + stride * static_cast<std::size_t>(y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image load_png(const std::filesystem::path& path) {
  DecodedPng png = read_png(path, false);
  if (png.channels != 3) throw IoError("'" + path.string() + "' did not decode to RGB");
  Image out(png.width, png.height);
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = static_cast<float>(png.pixels[i]) / 255.0f;
  return out;
}

void save_png(const Image& image, const std::filesystem::path& path) {
  if (image.empty()) throw ShapeError("save_png: empty image");
  std::vector<std::uint8_t> bytes(image.data().size());
  std::transform(image.data().begin(), image.data().end(), bytes.begin(), to_byte);
  write_png(path, image.width(), image.height(), PNG_COLOR_TYPE_RGB, bytes, 3, nullptr);
}

SemanticLayout load_layout_png(const std::filesystem::path& path) {
  DecodedPng png = read_png(path, true);
  if (png.color_type != PNG_COLOR_TYPE_PALETTE && png.color_type != PNG_COLOR_TYPE_GRAY) {
    throw IoError("'" + path.string() + "' is not an indexed or grayscale layout PNG");
  }
  if (png.channels != 1) throw IoError("'" + path.string() + "' has more than one channel");
  return SemanticLayout(png.width, png.height, std::move(png.pixels));
}

void save_layout_png(const SemanticLayout& layout, const std::filesystem::path& path) {
  if (layout.width() == 0 || layout.height() == 0) throw ShapeError("save_layout_png: empty layout");
  std::vector<png_color> palette;
  for (const Rgb& c : class_colors()) palette.push_back({to_byte(c[0]), to_byte(c[1]), to_byte(c[2])});
  write_png(path, layout.width(), layout.height(), PNG_COLOR_TYPE_PALETTE, layout.cells(), 1, &palette);
}

}  // namespace hsd

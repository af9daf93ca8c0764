#include "hsd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include <json.hpp>

#include "hsd/errors.hpp"

namespace hsd {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::array<Rgb, kNumClasses>& class_colors() {
  // Distinct points of the {0.1, 0.5, 0.9}^3 lattice.
  static const std::array<Rgb, kNumClasses> colors = {{
      {0.1f, 0.1f, 0.1f},  // background
      {0.9f, 0.1f, 0.1f},  // hat
      {0.5f, 0.1f, 0.1f},  // hair
      {0.1f, 0.1f, 0.9f},  // glove
      {0.1f, 0.1f, 0.5f},  // sunglasses
      {0.1f, 0.5f, 0.9f},  // upper-clothes
      {0.9f, 0.1f, 0.9f},  // dress
      {0.1f, 0.9f, 0.1f},  // coat
      {0.5f, 0.5f, 0.9f},  // socks
      {0.1f, 0.5f, 0.1f},  // pants
      {0.9f, 0.5f, 0.5f},  // skin
      {0.5f, 0.9f, 0.9f},  // scarf
      {0.9f, 0.1f, 0.5f},  // skirt
      {0.9f, 0.9f, 0.5f},  // face
      {0.9f, 0.5f, 0.1f},  // left-arm
      {0.5f, 0.5f, 0.1f},  // right-arm
      {0.1f, 0.9f, 0.9f},  // left-leg
      {0.5f, 0.9f, 0.1f},  // right-leg
      {0.5f, 0.1f, 0.5f},  // left-shoe
      {0.9f, 0.9f, 0.9f},  // right-shoe
  }};
  return colors;
}

namespace {

Rgb jittered(const Rgb& base, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-kJitterRadius, kJitterRadius);
  return {base[0] + u(rng), base[1] + u(rng), base[2] + u(rng)};
}

Rgb offset_color(int cls, const Rgb& realised, int family) {
  const Rgb& base = class_colors()[static_cast<std::size_t>(cls)];
  const Rgb& fam = class_colors()[static_cast<std::size_t>(family)];
  return {base[0] + realised[0] - fam[0], base[1] + realised[1] - fam[1], base[2] + realised[2] - fam[2]};
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

bool bernoulli(std::mt19937_64& rng, double p) { return std::bernoulli_distribution(p)(rng); }

json rgb_json(const Rgb& c) { return json::array({c[0], c[1], c[2]}); }

// Reference geometry: head centre row at size 64.
constexpr double kHeadRow = 20.0;

}  // namespace

PersonParams sample_params(std::mt19937_64& rng, const CorpusOptions& options) {
  PersonParams p;
  p.head_radius = uniform_int(rng, 8, 11);
  p.neck_width = uniform_int(rng, 6, 10);
  p.neck_length = uniform_int(rng, 3, 7);
  p.shoulder_width = 2 * uniform_int(rng, 17, 23);
  p.arm_width = uniform_int(rng, 4, 6);
  p.sleeve_length = uniform_int(rng, 4, 10);
  p.face_offset_x = uniform_int(rng, -options.max_face_offset, options.max_face_offset);
  p.long_hair_length = bernoulli(rng, options.long_hair_probability)
                           ? uniform_int(rng, p.head_radius, (22 * p.head_radius) / 10)
                           : 0;
  p.has_hat = bernoulli(rng, options.hat_probability);
  p.has_sunglasses = bernoulli(rng, options.sunglasses_probability);
  p.wears_coat = bernoulli(rng, options.coat_probability);
  p.torso_height = 64 - static_cast<int>(kHeadRow) - p.head_radius - p.neck_length;
  const auto& colors = class_colors();
  p.skin_tone = jittered(colors[kFace], rng);
  p.hair_color = jittered(colors[kHair], rng);
  p.clothes_color = jittered(colors[p.wears_coat ? kCoat : kUpperClothes], rng);
  p.hat_color = jittered(colors[kHat], rng);
  p.background_color = jittered(colors[kBackground], rng);
  return p;
}

PersonSample render_person(const PersonParams& p, int size) {
  if (size < 32 || size % 4 != 0) throw ShapeError("render_person: size must be a multiple of 4 and >= 32");
  if (p.head_radius <= 0 || p.neck_width <= 0 || p.shoulder_width <= 0 || p.arm_width <= 0 || p.torso_height <= 0 ||
      p.neck_length <= 0 || p.sleeve_length < 0 || p.long_hair_length < 0) {
    throw ParamsError("render_person: widths and lengths must be positive");
  }
  const double k = size / 64.0;
  const double cx = size / 2.0 + p.face_offset_x * k;
  const double cy = kHeadRow * k;
  const double ry = p.head_radius * k;
  const double rx = 0.8 * ry;
  const double hair_cy = cy - 0.2 * ry;
  const double hair_rx = rx + 2.0 * k;
  const double hair_ry = ry + 1.5 * k;
  const double brim_y = cy - 0.5 * ry;
  const double brim_hw = rx + 3.5 * k;
  const double shoulder_y = cy + ry + p.neck_length * k;
  const double torso_bottom = shoulder_y + p.torso_height * k;
  const double bx = size / 2.0;
  const double hw = p.shoulder_width * 0.5 * k;
  const double arm_w = p.arm_width * k;
  const double neck_hw = p.neck_width * 0.5 * k;

  if (hair_cy - hair_ry - 1.5 * k < 0.0 || cx - brim_hw < 0.0 || cx + brim_hw > size || bx - hw - arm_w < 0.0 ||
      bx + hw + arm_w > size || torso_bottom > size + 1e-9 || shoulder_y > size - 8.0 * k ||
      cy + p.long_hair_length * k > size) {
    throw ParamsError("render_person: geometry leaves the frame");
  }

  SemanticLayout layout(size, size);
  for (int y = 0; y < size; ++y) {
    const double py = y + 0.5;
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5;
      int cls = kBackground;
      // Torso with rounded shoulders.
      if (py >= shoulder_y && py < torso_bottom) {
        const double ramp = std::min(1.0, (py - shoulder_y) / (3.0 * k));
        const double half = hw * (0.75 + 0.25 * ramp);
        if (std::abs(px - bx) < half) cls = p.wears_coat ? kCoat : kUpperClothes;
        const double out = std::abs(px - bx) - hw;
        if (out >= 0.0 && out < arm_w && py >= shoulder_y + 2.0 * k) {
          if (py < shoulder_y + p.sleeve_length * k) {
            cls = p.wears_coat ? kCoat : kUpperClothes;
          } else {
            cls = px > bx ? kLeftArm : kRightArm;
          }
        }
      }
      if (std::abs(px - cx) <= neck_hw && py >= cy + 0.5 * ry && py < shoulder_y + 1.0 * k) cls = kSkin;
      if (p.long_hair_length > 0) {
        const double side = std::abs(px - cx);
        if (side >= rx - 1.0 * k && side <= hair_rx && py >= cy && py <= cy + p.long_hair_length * k) cls = kHair;
      }
      const double hx = (px - cx) / hair_rx;
      const double hy = (py - hair_cy) / hair_ry;
      const bool in_hair = hx * hx + hy * hy <= 1.0;
      if (in_hair && py <= cy + 0.2 * ry) cls = kHair;
      const double fx = (px - cx) / rx;
      const double fy = (py - cy) / ry;
      if (fx * fx + fy * fy <= 1.0) cls = kFace;
      if (p.has_hat) {
        if (in_hair && py < brim_y) cls = kHat;
        if (py >= brim_y - 1.5 * k && py < brim_y + 0.5 * k && std::abs(px - cx) <= brim_hw) cls = kHat;
      }
      if (p.has_sunglasses && cls == kFace && py >= cy - 0.3 * ry && py <= cy + 0.05 * ry &&
          std::abs(px - cx) <= 0.75 * rx) {
        cls = kSunglasses;
      }
      layout.set(x, y, cls);
    }
  }

  std::array<Rgb, kNumClasses> palette = class_colors();
  palette[kBackground] = p.background_color;
  palette[kHat] = p.hat_color;
  palette[kHair] = p.hair_color;
  palette[kFace] = p.skin_tone;
  palette[kSkin] = offset_color(kSkin, p.skin_tone, kFace);
  palette[kLeftArm] = offset_color(kLeftArm, p.skin_tone, kFace);
  palette[kRightArm] = offset_color(kRightArm, p.skin_tone, kFace);
  palette[kUpperClothes] = offset_color(kUpperClothes, p.clothes_color, p.wears_coat ? kCoat : kUpperClothes);
  palette[kCoat] = offset_color(kCoat, p.clothes_color, p.wears_coat ? kCoat : kUpperClothes);

  std::mt19937_64 tex(p.texture_seed);
  std::uniform_real_distribution<float> noise(-kTextureAmplitude, kTextureAmplitude);
  Image image(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Rgb& c = palette[static_cast<std::size_t>(layout.at(x, y))];
      for (int ch = 0; ch < 3; ++ch) image.at(x, y, ch) = std::clamp(c[ch] + noise(tex), 0.0f, 1.0f);
    }
  }
  return {std::move(image), std::move(layout), cy, p};
}

PersonSample make_sample(std::uint64_t seed, std::uint64_t index, int size, const CorpusOptions& options) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  PersonParams p = sample_params(rng, options);
  p.texture_seed = rng();
  return render_person(p, size);
}

namespace {

std::string stem(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", i);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

json params_json(const PersonParams& p) {
  return {{"head_radius", p.head_radius},
          {"neck_width", p.neck_width},
          {"neck_length", p.neck_length},
          {"shoulder_width", p.shoulder_width},
          {"torso_height", p.torso_height},
          {"arm_width", p.arm_width},
          {"sleeve_length", p.sleeve_length},
          {"face_offset_x", p.face_offset_x},
          {"long_hair_length", p.long_hair_length},
          {"has_hat", p.has_hat},
          {"has_sunglasses", p.has_sunglasses},
          {"wears_coat", p.wears_coat},
          {"skin_tone", rgb_json(p.skin_tone)},
          {"hair_color", rgb_json(p.hair_color)},
          {"clothes_color", rgb_json(p.clothes_color)},
          {"hat_color", rgb_json(p.hat_color)},
          {"background_color", rgb_json(p.background_color)},
          {"texture_seed", p.texture_seed}};
}

}  // namespace

void generate_corpus(const fs::path& dir, int n, std::uint64_t seed, int size, const CorpusOptions& options) {
  if (n < 2) throw ConfigError("generate_corpus: need at least 2 samples");
  std::error_code ec;
  for (const char* sub : {"images", "layouts", "meta"}) {
    fs::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create '" + (dir / sub).string() + "': " + ec.message());
  }
  for (int i = 0; i < n; ++i) {
    PersonSample s = make_sample(seed, static_cast<std::uint64_t>(i), size, options);
    const std::string name = stem(i);
    save_png(s.image, dir / "images" / (name + ".png"));
    save_layout_png(s.layout, dir / "layouts" / (name + ".png"));
    json meta = {{"index", i}, {"nose_y", s.nose_y}, {"params", params_json(s.params)}};
    write_text(dir / "meta" / (name + ".json"), meta.dump(2) + "\n");
  }
  json manifest = {{"version", 1},
                   {"seed", seed},
                   {"n", n},
                   {"size", size},
                   {"options",
                    {{"hat_probability", options.hat_probability},
                     {"long_hair_probability", options.long_hair_probability},
                     {"sunglasses_probability", options.sunglasses_probability},
                     {"coat_probability", options.coat_probability},
                     {"max_face_offset", options.max_face_offset}}}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<CorpusEntry> load_corpus(const fs::path& dir) {
  const fs::path images = dir / "images";
  if (!fs::is_directory(images)) throw IoError("'" + images.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<CorpusEntry> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    CorpusEntry e;
    e.image = load_png(f);
    const fs::path lp = dir / "layouts" / f.filename();
    e.layout = fs::exists(lp) ? load_layout_png(lp) : SemanticLayout(e.image.width(), e.image.height());
    const fs::path mp = dir / "meta" / f.filename().replace_extension(".json");
    if (fs::exists(mp)) {
      std::ifstream in(mp);
      json meta = json::parse(in);
      if (meta.contains("nose_y") && meta["nose_y"].is_number()) e.nose_y = meta["nose_y"].get<double>();
    }
    out.push_back(std::move(e));
  }
  return out;
}

SemanticLayout decode_colors(const Image& image) {
  const auto& colors = class_colors();
  SemanticLayout out(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      int best = 0;
      float best_d = 1e9f;
      for (int c = 0; c < kNumClasses; ++c) {
        float d = 0.0f;
        for (int ch = 0; ch < 3; ++ch) {
          const float diff = image.at(x, y, ch) - colors[static_cast<std::size_t>(c)][ch];
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      out.set(x, y, best);
    }
  }
  return out;
}

}  // namespace hsd

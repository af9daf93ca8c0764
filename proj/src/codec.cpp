#include "hsd/codec.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "hsd/errors.hpp"
#include "hsd/tensor_util.hpp"

namespace hsd {

namespace {

// Channel width at resolution level `level` (0 = full resolution).
std::int64_t width_at(const CodecConfig& cfg, int level) {
  if (level == 0) return std::max<std::int64_t>(cfg.base_channels / 2, 8);
  return cfg.base_channels << std::min(level - 1, 2);
}

void check_divisible(std::int64_t h, std::int64_t w, int f, const char* what) {
  if (h % f != 0 || w % f != 0) {
    throw ShapeError(std::string(what) + ": spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by f = " + std::to_string(f));
  }
}

}  // namespace

int CodecConfig::levels() const {
  if (f < 1 || (f & (f - 1)) != 0) throw ConfigError("CodecConfig: f must be a power of two, got " + std::to_string(f));
  int n = 0;
  for (int v = f; v > 1; v >>= 1) ++n;
  return n;
}

void CodecConfig::validate() const {
  levels();
  if (z_channels < 1 || s_channels < 1 || base_channels < 1) throw ConfigError("CodecConfig: channel counts must be positive");
}

nlohmann::json to_json(const CodecConfig& c) {
  return {{"f", c.f}, {"z_channels", c.z_channels}, {"s_channels", c.s_channels}, {"base_channels", c.base_channels}};
}

CodecConfig codec_config_from_json(const nlohmann::json& j) {
  CodecConfig c;
  c.f = j.value("f", c.f);
  c.z_channels = j.value("z_channels", c.z_channels);
  c.s_channels = j.value("s_channels", c.s_channels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.validate();
  return c;
}

EncoderImpl::EncoderImpl(const CodecConfig& cfg) {
  in_conv = register_module("in_conv", conv3x3(3, width_at(cfg, 0)));
  const int n = cfg.levels();
  for (int i = 0; i < n; ++i) {
    downs.push_back(register_module("down" + std::to_string(i), downsample_conv(width_at(cfg, i), width_at(cfg, i + 1))));
    res.push_back(register_module("res" + std::to_string(i), ResBlock(width_at(cfg, i + 1), width_at(cfg, i + 1))));
  }
  const std::int64_t c = width_at(cfg, n);
  mid = register_module("mid", ResBlock(c, c));
  out_norm = register_module("out_norm", torch::nn::GroupNorm(group_count(c), c));
  out_conv = register_module("out_conv", conv3x3(c, cfg.z_channels));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  torch::Tensor h = torch::silu(in_conv(x));
  for (std::size_t i = 0; i < res.size(); ++i) h = res[i](downs[i](h));
  return out_conv(torch::silu(out_norm(mid(h))));
}

DecoderImpl::DecoderImpl(const CodecConfig& cfg) {
  const int n = cfg.levels();
  const std::int64_t c = width_at(cfg, n);
  in_conv = register_module("in_conv", conv3x3(cfg.z_channels, c));
  mid = register_module("mid", ResBlock(c, c));
  for (int i = n; i > 0; --i) {
    const int k = n - i;
    ups.push_back(register_module("up" + std::to_string(k), Upsample(width_at(cfg, i), width_at(cfg, i - 1))));
    // No residual block at full resolution; it dominates the cost.
    if (i > 1) res.push_back(register_module("res" + std::to_string(k), ResBlock(width_at(cfg, i - 1), width_at(cfg, i - 1))));
  }
  const std::int64_t c0 = width_at(cfg, 0);
  out_norm = register_module("out_norm", torch::nn::GroupNorm(group_count(c0), c0));
  out_conv = register_module("out_conv", conv3x3(c0, 3));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z) {
  torch::Tensor h = mid(in_conv(z));
  for (std::size_t i = 0; i < ups.size(); ++i) {
    h = ups[i](h);
    if (i < res.size()) h = res[i](h);
  }
  return out_conv(torch::silu(out_norm(h)));
}

CodecImpl::CodecImpl(const CodecConfig& c) : cfg(c) {
  cfg.validate();
  encoder = register_module("encoder", Encoder(cfg));
  decoder = register_module("decoder", Decoder(cfg));
}

torch::Tensor CodecImpl::encode(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) throw ShapeError("encode: expected [N, 3, H, W] images");
  check_divisible(images.size(2), images.size(3), cfg.f, "encode");
  return encoder(images) * latent_scale;
}

torch::Tensor CodecImpl::decode(const torch::Tensor& z) {
  if (z.dim() != 4 || z.size(1) != cfg.z_channels) {
    throw ShapeError("decode: expected [N, " + std::to_string(cfg.z_channels) + ", h, w] latent");
  }
  return decoder(z / latent_scale).clamp(0.0, 1.0);
}

torch::Tensor CodecImpl::reconstruct_raw(const torch::Tensor& images) {
  check_divisible(images.size(2), images.size(3), cfg.f, "reconstruct_raw");
  return decoder(encoder(images));
}

torch::Tensor CodecImpl::encode(const Image& image) { return encode(image_to_tensor(image)); }

Image CodecImpl::decode_image(const torch::Tensor& z) { return tensor_to_image(decode(z)); }

ConditionEncoderImpl::ConditionEncoderImpl(const CodecConfig& c) : cfg(c) {
  cfg.validate();
  const std::int64_t w = cfg.base_channels;
  // The first layer already strides, so nothing runs at full resolution.
  std::int64_t in = kNumClasses;
  for (int i = 0; i < cfg.levels(); ++i) {
    downs.push_back(register_module("down" + std::to_string(i), downsample_conv(in, w)));
    in = w;
  }
  out_conv = register_module("out_conv", conv3x3(in, cfg.s_channels));
}

torch::Tensor ConditionEncoderImpl::forward(const torch::Tensor& one_hot) {
  if (one_hot.dim() != 4 || one_hot.size(1) != kNumClasses) throw ShapeError("condition encoder: expected [N, 20, H, W]");
  check_divisible(one_hot.size(2), one_hot.size(3), cfg.f, "encode_condition");
  torch::Tensor h = one_hot;
  for (auto& d : downs) h = torch::silu(d(h));
  return out_conv(h);
}

torch::Tensor encode_condition(ConditionEncoder& tau, std::span<const SemanticLayout> layouts) {
  return tau->forward(one_hot_layouts(layouts));
}

torch::Tensor encode_condition(ConditionEncoder& tau, const SemanticLayout& layout) {
  return encode_condition(tau, std::span<const SemanticLayout>(&layout, 1));
}

Codec make_codec(const CodecConfig& cfg, std::uint64_t seed) {
  Codec codec(cfg);
  torch::Generator gen = make_generator(seed);
  init_parameters(*codec, gen);
  return codec;
}

ConditionEncoder make_condition_encoder(const CodecConfig& cfg, std::uint64_t seed) {
  ConditionEncoder tau(cfg);
  torch::Generator gen = make_generator(seed);
  init_parameters(*tau, gen);
  return tau;
}

CodecTrainResult train_codec(std::span<const Image> dataset, const CodecConfig& cfg, const CodecTrainOptions& opts) {
  if (dataset.empty()) throw ConfigError("train_codec: empty dataset");
  if (opts.steps < 1 || opts.batch_size < 1) throw ConfigError("train_codec: steps and batch_size must be positive");
  torch::Tensor data = images_to_tensor(dataset);
  check_divisible(data.size(2), data.size(3), cfg.f, "train_codec");

  CodecTrainResult result;
  result.codec = make_codec(cfg, opts.seed);
  Codec& codec = result.codec;
  codec->train();
  torch::optim::Adam adam = make_adam(codec->parameters(), opts.opt);
  std::mt19937_64 rng(opts.seed ^ 0xc0dec0deULL);
  std::uniform_int_distribution<std::int64_t> pick(0, data.size(0) - 1);
  const int batch = static_cast<int>(std::min<std::int64_t>(opts.batch_size, data.size(0)));

  result.losses.reserve(static_cast<std::size_t>(opts.steps));
  for (int step = 1; step <= opts.steps; ++step) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = pick(rng);
    torch::Tensor x = data.index_select(0, torch::tensor(idx, torch::kInt64));
    adam.zero_grad();
    torch::Tensor loss = (codec->reconstruct_raw(x) - x).abs().mean();
    loss.backward();
    adam.step();
    const double l = loss.item<double>();
    result.losses.push_back(l);
    if (opts.on_step) opts.on_step(step, l);
  }

  // Latent scale from the first (up to) 256 images.
  codec->eval();
  torch::NoGradGuard ng;
  torch::Tensor z = codec->encoder(data.narrow(0, 0, std::min<std::int64_t>(256, data.size(0))));
  const double sd = z.std().item<double>();
  codec->latent_scale = sd > 1e-8 ? 1.0 / sd : 1.0;
  result.meta = {{"loss", "l1"},
                 {"steps", opts.steps},
                 {"batch_size", batch},
                 {"seed", opts.seed},
                 {"num_images", data.size(0)},
                 {"final_loss", result.losses.back()},
                 {"optimizer", to_json(opts.opt)}};
  return result;
}

Checkpoint codec_checkpoint(Codec& codec, const nlohmann::json& training_meta) {
  Checkpoint ck;
  ck.meta["kind"] = "codec";
  ck.meta["config"] = to_json(codec->cfg);
  ck.meta["latent_scale"] = codec->latent_scale;
  ck.meta["training"] = training_meta;
  export_module(*codec, ck, "codec.");
  return ck;
}

Codec codec_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", std::string()) != "codec") throw IoError("checkpoint is not a codec checkpoint");
  Codec codec(codec_config_from_json(ck.meta.at("config")));
  import_module(*codec, ck, "codec.");
  codec->latent_scale = ck.meta.at("latent_scale").get<double>();
  codec->eval();
  return codec;
}

}  // namespace hsd

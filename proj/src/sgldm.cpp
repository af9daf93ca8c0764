#include "hsd/sgldm.hpp"

#include <algorithm>
#include <random>

#include "hsd/errors.hpp"
#include "hsd/tensor_util.hpp"

namespace hsd {

nlohmann::json to_json(const ScheduleConfig& s) {
  return {{"T", s.T}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}, {"kind", "linear"}};
}

ScheduleConfig schedule_config_from_json(const nlohmann::json& j) {
  ScheduleConfig s;
  s.T = j.value("T", s.T);
  s.beta_start = j.value("beta_start", s.beta_start);
  s.beta_end = j.value("beta_end", s.beta_end);
  if (j.value("kind", std::string("linear")) != "linear") throw ConfigError("schedule: only 'linear' is supported");
  return s;
}

nlohmann::json to_json(const DenoiserConfig& c) {
  return {{"z_channels", c.z_channels}, {"s_channels", c.s_channels}, {"base_channels", c.base_channels},
          {"time_dim", c.time_dim}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.z_channels = j.value("z_channels", c.z_channels);
  c.s_channels = j.value("s_channels", c.s_channels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.time_dim = j.value("time_dim", c.time_dim);
  if (c.z_channels < 1 || c.s_channels < 1 || c.base_channels < 1 || c.time_dim < 2) {
    throw ConfigError("denoiser config: channel counts must be positive");
  }
  return c;
}

void SgLdm::eval() {
  denoiser->eval();
  tau->eval();
}

SgLdm make_sgldm(const CodecConfig& codec_cfg, DenoiserConfig denoiser_cfg, const ScheduleConfig& sched,
                 std::uint64_t seed) {
  denoiser_cfg.z_channels = codec_cfg.z_channels;
  denoiser_cfg.s_channels = codec_cfg.s_channels;
  SgLdm m;
  m.denoiser_cfg = denoiser_cfg;
  m.codec_cfg = codec_cfg;
  m.schedule_cfg = sched;
  m.schedule = make_schedule(sched.T, sched.beta_start, sched.beta_end);
  m.denoiser = make_denoiser(denoiser_cfg, seed);
  m.tau = make_condition_encoder(codec_cfg, seed + 1);
  return m;
}

std::vector<double> trailing_average(const std::vector<double>& values, int window) {
  if (window < 1) throw ConfigError("trailing_average: window must be >= 1");
  std::vector<double> out(values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (i >= static_cast<std::size_t>(window)) sum -= values[i - static_cast<std::size_t>(window)];
    out[i] = sum / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
  }
  return out;
}

SgLdmTrainResult train_sgldm(Codec& codec, std::span<const Image> images, std::span<const SemanticLayout> layouts,
                             const DenoiserConfig& denoiser_cfg, const ScheduleConfig& sched,
                             const SgLdmTrainOptions& opts) {
  if (images.empty()) throw ConfigError("train_sgldm: empty dataset");
  if (images.size() != layouts.size()) throw ConfigError("train_sgldm: image and layout counts differ");
  if (opts.steps < 1 || opts.batch_size < 1) throw ConfigError("train_sgldm: steps and batch_size must be positive");
  if (opts.cover_probability < 0.0 || opts.cover_probability > 1.0) {
    throw ConfigError("train_sgldm: cover_probability outside [0, 1]");
  }
  if (opts.ema_decay < 0.0 || opts.ema_decay >= 1.0) throw ConfigError("train_sgldm: ema_decay outside [0, 1)");

  // Latents are fixed for the whole run, so encode once.
  torch::Tensor z_all;
  {
    torch::NoGradGuard ng;
    codec->eval();
    std::vector<torch::Tensor> chunks;
    for (std::size_t i = 0; i < images.size(); i += 64) {
      const std::size_t n = std::min<std::size_t>(64, images.size() - i);
      chunks.push_back(codec->encode(images_to_tensor(images.subspan(i, n))));
    }
    z_all = torch::cat(chunks, 0);
  }

  SgLdmTrainResult result;
  result.model = make_sgldm(codec->cfg, denoiser_cfg, sched, opts.seed);
  SgLdm& m = result.model;
  m.denoiser->train();
  m.tau->train();
  std::vector<torch::Tensor> params = m.denoiser->parameters();
  for (auto& p : m.tau->parameters()) params.push_back(p);
  torch::optim::Adam adam = make_adam(params, opts.opt);
  std::vector<torch::Tensor> ema;
  if (opts.ema_decay > 0.0) {
    for (const auto& p : params) ema.push_back(p.detach().clone());
  }

  std::mt19937_64 rng(opts.seed ^ 0x5d1dULL);
  torch::Generator gen = make_generator(opts.seed ^ 0xe95ULL);
  const std::int64_t n = static_cast<std::int64_t>(images.size());
  std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
  std::uniform_int_distribution<int> pick_t(1, m.schedule.T());
  std::bernoulli_distribution cover(opts.cover_probability);
  const int batch = static_cast<int>(std::min<std::int64_t>(opts.batch_size, n));
  const std::vector<double>& ab = m.schedule.alpha_bars();

  result.losses.reserve(static_cast<std::size_t>(opts.steps));
  for (int step = 1; step <= opts.steps; ++step) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(batch));
    std::vector<double> ts(static_cast<std::size_t>(batch)), sa(ts.size()), sb(ts.size());
    std::vector<SemanticLayout> cond;
    cond.reserve(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      idx[b] = pick(rng);
      const int t = pick_t(rng);
      ts[b] = t;
      sa[b] = std::sqrt(ab[static_cast<std::size_t>(t)]);
      sb[b] = std::sqrt(1.0 - ab[static_cast<std::size_t>(t)]);
      const SemanticLayout& l = layouts[static_cast<std::size_t>(idx[b])];
      if (n > 1 && cover(rng)) {
        std::int64_t j = pick(rng);
        while (j == idx[b]) j = pick(rng);
        cond.push_back(head_cover_augment(l, layouts[static_cast<std::size_t>(j)]));
      } else {
        cond.push_back(l);
      }
    }
    torch::Tensor z0 = z_all.index_select(0, torch::tensor(idx, torch::kInt64));
    torch::Tensor eps = torch::randn(z0.sizes(), gen);
    torch::Tensor a = torch::tensor(sa, torch::kFloat32).view({-1, 1, 1, 1});
    torch::Tensor s = torch::tensor(sb, torch::kFloat32).view({-1, 1, 1, 1});
    torch::Tensor z_t = a * z0 + s * eps;

    adam.zero_grad();
    torch::Tensor pred = m.predict_noise(z_t, torch::tensor(ts, torch::kFloat32), m.condition(cond));
    torch::Tensor loss = ldm_loss(pred, eps);
    loss.backward();
    adam.step();
    if (!ema.empty()) {
      torch::NoGradGuard ng;
      // Warm-up keeps the average from being dominated by the initial weights.
      const double d = std::min(opts.ema_decay, (1.0 + step) / (10.0 + step));
      for (std::size_t k = 0; k < ema.size(); ++k) ema[k].mul_(d).add_(params[k].detach(), 1.0 - d);
    }
    const double l = loss.item<double>();
    result.losses.push_back(l);
    if (opts.on_step) opts.on_step(step, l);
  }
  if (!ema.empty()) {
    torch::NoGradGuard ng;
    for (std::size_t k = 0; k < ema.size(); ++k) params[k].copy_(ema[k]);
  }
  result.moving_average = trailing_average(result.losses, opts.average_window);
  result.meta = {{"loss", "mse_eps"},
                 {"ema_decay", opts.ema_decay},
                 {"steps", opts.steps},
                 {"batch_size", batch},
                 {"seed", opts.seed},
                 {"cover_probability", opts.cover_probability},
                 {"num_samples", n},
                 {"average_window", opts.average_window},
                 {"final_loss", result.losses.back()},
                 {"final_moving_average", result.moving_average.back()},
                 {"optimizer", to_json(opts.opt)}};
  m.eval();
  return result;
}

Checkpoint sgldm_checkpoint(SgLdm& model, const nlohmann::json& training_meta) {
  Checkpoint ck;
  ck.meta["kind"] = "sgldm";
  ck.meta["denoiser"] = to_json(model.denoiser_cfg);
  ck.meta["codec"] = to_json(model.codec_cfg);
  ck.meta["schedule"] = to_json(model.schedule_cfg);
  ck.meta["training"] = training_meta;
  export_module(*model.denoiser, ck, "denoiser.");
  export_module(*model.tau, ck, "tau.");
  return ck;
}

SgLdm sgldm_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", std::string()) != "sgldm") throw IoError("checkpoint is not an SG-LDM checkpoint");
  SgLdm m = make_sgldm(codec_config_from_json(ck.meta.at("codec")), denoiser_config_from_json(ck.meta.at("denoiser")),
                       schedule_config_from_json(ck.meta.at("schedule")), 0);
  import_module(*m.denoiser, ck, "denoiser.");
  import_module(*m.tau, ck, "tau.");
  m.eval();
  return m;
}

}  // namespace hsd

#include "hsd/layout_generator.hpp"

#include <array>
#include <cmath>
#include <random>
#include <string>

#include "hsd/errors.hpp"
#include "hsd/tensor_util.hpp"

namespace hsd {

namespace F = torch::nn::functional;

namespace {

torch::Tensor upsample_to(const torch::Tensor& x, const torch::Tensor& like) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{like.size(2), like.size(3)})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor pool2(const torch::Tensor& x) { return F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2).ceil_mode(true)); }

void check_target(const torch::Tensor& target) {
  if (target.numel() == 0) return;
  const std::int64_t lo = target.min().item<std::int64_t>();
  const std::int64_t hi = target.max().item<std::int64_t>();
  if (lo < 0 || hi >= kNumClasses) throw TaxonomyError("target class index outside [0, 20)");
}

}  // namespace

nlohmann::json to_json(const LayoutGenConfig& c) {
  return {{"base_channels", c.base_channels}, {"mid_channels", c.mid_channels}};
}

LayoutGenConfig layout_gen_config_from_json(const nlohmann::json& j) {
  LayoutGenConfig c;
  c.base_channels = j.value("base_channels", c.base_channels);
  c.mid_channels = j.value("mid_channels", c.mid_channels);
  if (c.base_channels < 1 || c.mid_channels < 1) throw ConfigError("layout generator: channel counts must be positive");
  return c;
}

void LayoutGenLossWeights::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("layout generator loss weights must be >= 0");
}

ConvNormActImpl::ConvNormActImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t dilation) {
  conv = register_module("conv", conv3x3(in_ch, out_ch, dilation));
  norm = register_module("norm", torch::nn::GroupNorm(group_count(out_ch), out_ch));
}

torch::Tensor ConvNormActImpl::forward(const torch::Tensor& x) { return torch::relu(norm(conv(x))); }

RsuBlockImpl::RsuBlockImpl(std::int64_t in_ch, std::int64_t mid_ch, std::int64_t out_ch, int h, bool dil)
    : height(h), dilated(dil) {
  if (height < 2) throw ConfigError("RsuBlock: height must be >= 2");
  in_proj = register_module("in_proj", ConvNormAct(in_ch, out_ch));
  for (int k = 0; k < height - 1; ++k) {
    const std::int64_t d = dilated ? (std::int64_t{1} << k) : 1;
    enc.push_back(register_module("enc" + std::to_string(k), ConvNormAct(k == 0 ? out_ch : mid_ch, mid_ch, d)));
  }
  bottom = register_module("bottom", ConvNormAct(mid_ch, mid_ch, dilated ? (std::int64_t{1} << (height - 1)) : 2));
  for (int k = 0; k < height - 1; ++k) {
    const std::int64_t d = dilated ? (std::int64_t{1} << k) : 1;
    dec.push_back(register_module("dec" + std::to_string(k), ConvNormAct(2 * mid_ch, k == 0 ? out_ch : mid_ch, d)));
  }
}

torch::Tensor RsuBlockImpl::forward(const torch::Tensor& x) {
  torch::Tensor hx_in = in_proj(x);
  std::vector<torch::Tensor> skips;
  torch::Tensor h = hx_in;
  for (std::size_t k = 0; k < enc.size(); ++k) {
    if (k > 0 && !dilated) h = pool2(h);
    h = enc[k](h);
    skips.push_back(h);
  }
  h = bottom(h);
  for (std::size_t k = enc.size(); k-- > 0;) {
    if (h.size(2) != skips[k].size(2) || h.size(3) != skips[k].size(3)) h = upsample_to(h, skips[k]);
    h = dec[k](torch::cat({h, skips[k]}, 1));
  }
  return h + hx_in;
}

LayoutGeneratorImpl::LayoutGeneratorImpl(const LayoutGenConfig& c) : cfg(c) {
  const std::int64_t b = cfg.base_channels, m = cfg.mid_channels;
  stage1 = register_module("stage1", RsuBlock(kNumClasses, m, b, 4));
  stage2 = register_module("stage2", RsuBlock(b, m, 2 * b, 3));
  stage3 = register_module("stage3", RsuBlock(2 * b, 2 * m, 2 * b, 3, true));
  dec2 = register_module("dec2", RsuBlock(4 * b, m, 2 * b, 3));
  dec1 = register_module("dec1", RsuBlock(3 * b, m, b, 4));
  head = register_module("head", conv3x3(b, kNumClasses + 1));
}

torch::Tensor LayoutGeneratorImpl::forward(const torch::Tensor& one_hot) {
  if (one_hot.dim() != 4 || one_hot.size(1) != kNumClasses) throw ShapeError("layout generator: expected [N, 20, H, W]");
  torch::Tensor h1 = stage1(one_hot);
  torch::Tensor h2 = stage2(pool2(h1));
  torch::Tensor h3 = stage3(pool2(h2));
  torch::Tensor d2 = dec2(torch::cat({upsample_to(h3, h2), h2}, 1));
  torch::Tensor d1 = dec1(torch::cat({upsample_to(d2, h1), h1}, 1));
  return head(d1);
}

LayoutDiscriminatorImpl::LayoutDiscriminatorImpl(std::int64_t w) {
  c1 = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(kNumClasses, w, 4).stride(2).padding(1)));
  c2 = register_module("c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(w, 2 * w, 4).stride(2).padding(1)));
  n2 = register_module("n2", torch::nn::GroupNorm(group_count(2 * w), 2 * w));
  c3 = register_module("c3", conv3x3(2 * w, 1));
}

torch::Tensor LayoutDiscriminatorImpl::forward(const torch::Tensor& x) {
  torch::Tensor h = torch::leaky_relu(c1(x), 0.2);
  h = torch::leaky_relu(n2(c2(h)), 0.2);
  return c3(h);
}

LayoutGenOutput split_output(const torch::Tensor& raw) {
  if (raw.dim() != 4 || raw.size(1) != kNumClasses + 1) throw ShapeError("layout generator output must be [N, 21, H, W]");
  torch::Tensor a = raw.narrow(1, kNumClasses, 1);
  return {raw.narrow(1, 0, kNumClasses), torch::sigmoid(a), a};
}

LayoutGenOutput run_layout_generator(LayoutGenerator& g, const torch::Tensor& one_hot) {
  return split_output(g->forward(one_hot));
}

SemanticLayout compose_output(const LayoutGenOutput& raw, const SemanticLayout& input_layout) {
  torch::Tensor logits = raw.class_logits.dim() == 4 ? raw.class_logits[0] : raw.class_logits;
  torch::Tensor focus = raw.focus.dim() == 4 ? raw.focus[0][0] : (raw.focus.dim() == 3 ? raw.focus[0] : raw.focus);
  if (logits.dim() != 3 || logits.size(0) != kNumClasses || logits.size(1) != input_layout.height() ||
      logits.size(2) != input_layout.width() || focus.size(0) != input_layout.height() ||
      focus.size(1) != input_layout.width()) {
    throw ShapeError("compose_output: generator output and input layout dims disagree");
  }
  torch::Tensor pred = logits.argmax(0).to(torch::kInt64).contiguous();
  torch::Tensor sel = (focus >= 0.5).contiguous();
  const std::int64_t* p = pred.data_ptr<std::int64_t>();
  const bool* s = sel.data_ptr<bool>();
  SemanticLayout out = input_layout;
  const int w = input_layout.width();
  for (int y = 0; y < input_layout.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (s[i]) out.set(x, y, static_cast<int>(p[i]));
    }
  }
  return out;
}

SemanticLayout complete_layout(LayoutGenerator& g, const SemanticLayout& layout) {
  torch::NoGradGuard ng;
  return compose_output(run_layout_generator(g, one_hot_layouts(std::span<const SemanticLayout>(&layout, 1))), layout);
}

torch::Tensor composed_log_probs(const LayoutGenOutput& out, const torch::Tensor& input_one_hot) {
  if (!out.focus_logit.defined()) throw ContractError("composed_log_probs needs the focus logit");
  torch::Tensor from_gen = torch::log_sigmoid(out.focus_logit) + torch::log_softmax(out.class_logits, 1);
  torch::Tensor keep = torch::log_sigmoid(-out.focus_logit).expand_as(from_gen);
  return torch::where(input_one_hot > 0.5, torch::logaddexp(from_gen, keep), from_gen);
}

torch::Tensor sample_gumbel(at::IntArrayRef shape, torch::Generator& gen, torch::ScalarType dtype) {
  torch::Tensor u = torch::rand(shape, gen, torch::TensorOptions().dtype(dtype));
  const double eps = dtype == torch::kFloat64 ? 1e-300 : 1e-20;
  torch::Tensor e = (-torch::log(u.clamp_min(eps))).clamp_min(eps);
  return -torch::log(e);
}

torch::Tensor gumbel_softmax_with_noise(const torch::Tensor& logits, const torch::Tensor& gumbel, double tau, bool hard,
                                        std::int64_t dim) {
  if (!(tau > 0.0)) throw ConfigError("gumbel_softmax: tau must be > 0");
  if (logits.sizes() != gumbel.sizes()) throw ShapeError("gumbel_softmax: noise shape differs from logits");
  torch::Tensor soft = torch::softmax((logits + gumbel) / tau, dim);
  if (!hard) return soft;
  torch::Tensor index = soft.argmax(dim, /*keepdim=*/true);
  torch::Tensor one = torch::zeros_like(soft).scatter_(dim, index, 1.0);
  return one - soft.detach() + soft;
}

torch::Tensor gumbel_softmax(const torch::Tensor& logits, double tau, torch::Generator& gen, bool hard, std::int64_t dim) {
  if (!(tau > 0.0)) throw ConfigError("gumbel_softmax: tau must be > 0");
  return gumbel_softmax_with_noise(logits, sample_gumbel(logits.sizes(), gen, logits.scalar_type()), tau, hard, dim);
}

torch::Tensor layout_nll(const torch::Tensor& log_probs, const torch::Tensor& target, const torch::Tensor& weights) {
  if (log_probs.dim() != 4 || log_probs.size(1) != kNumClasses) throw ShapeError("layout_nll: expected [N, 20, H, W]");
  if (target.dim() != 3 || target.size(0) != log_probs.size(0) || target.size(1) != log_probs.size(2) ||
      target.size(2) != log_probs.size(3)) {
    throw ShapeError("layout_nll: target must be [N, H, W] matching the prediction");
  }
  check_target(target);
  torch::Tensor nll = -log_probs.gather(1, target.to(torch::kInt64).unsqueeze(1)).squeeze(1);
  if (!weights.defined()) return nll.mean();
  if (weights.sizes() != nll.sizes()) throw ShapeError("layout_nll: weights must be [N, H, W]");
  torch::Tensor w = weights.to(nll.scalar_type());
  return (w * nll).sum() / w.sum().clamp_min(1e-12);
}

torch::Tensor layout_ce_loss(const torch::Tensor& logits, const torch::Tensor& target, const torch::Tensor& weights) {
  return layout_nll(torch::log_softmax(logits, 1), target, weights);
}

LsganLosses lsgan_losses(const torch::Tensor& disc_real, const torch::Tensor& disc_fake) {
  return {0.5 * (disc_real - 1.0).pow(2).mean() + 0.5 * disc_fake.pow(2).mean(), 0.5 * (disc_fake - 1.0).pow(2).mean()};
}

SemanticLayout corrupt_layout(const SemanticLayout& target, const SemanticLayout& cover) {
  return remove_neck(head_cover_augment(target, cover));
}

LayoutGenerator make_layout_generator(const LayoutGenConfig& cfg, std::uint64_t seed) {
  LayoutGenerator g(cfg);
  torch::Generator gen = make_generator(seed);
  init_parameters(*g, gen);
  return g;
}

LayoutGenTrainResult train_layout_generator(std::span<const SemanticLayout> dataset, const LayoutGenConfig& cfg,
                                            const LayoutGenLossWeights& weights, const LayoutGenTrainOptions& opts) {
  if (dataset.empty()) throw ConfigError("train_layout_generator: empty dataset");
  if (opts.steps < 1 || opts.batch_size < 1) throw ConfigError("train_layout_generator: steps and batch_size must be positive");
  weights.validate();

  LayoutGenTrainResult r;
  r.generator = make_layout_generator(cfg, opts.seed);
  r.discriminator = LayoutDiscriminator(32);
  {
    torch::Generator dg = make_generator(opts.seed + 1);
    init_parameters(*r.discriminator, dg);
  }
  LayoutGenerator& g = r.generator;
  LayoutDiscriminator& d = r.discriminator;
  g->train();
  d->train();
  torch::optim::Adam g_opt = make_adam(g->parameters(), opts.opt);
  torch::optim::Adam d_opt = make_adam(d->parameters(), opts.disc_opt);
  const bool adversarial = weights.lambda2 > 0.0;

  std::mt19937_64 rng(opts.seed ^ 0x1a7007ULL);
  torch::Generator gen = make_generator(opts.seed ^ 0x6b6bULL);
  const std::int64_t n = static_cast<std::int64_t>(dataset.size());
  std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
  const int batch = opts.batch_size;

  for (int step = 1; step <= opts.steps; ++step) {
    std::vector<SemanticLayout> targets, inputs;
    targets.reserve(static_cast<std::size_t>(batch));
    inputs.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      const std::int64_t i = pick(rng);
      std::int64_t j = pick(rng);
      if (n > 1) {
        while (j == i) j = pick(rng);
      }
      targets.push_back(dataset[static_cast<std::size_t>(i)]);
      inputs.push_back(corrupt_layout(targets.back(), dataset[static_cast<std::size_t>(j)]));
    }
    // The uncorrupted layouts enter only as the loss target and the discriminator's real sample.
    torch::Tensor target_idx = layouts_to_indices(targets);
    torch::Tensor x = one_hot_layouts(inputs);
    LayoutGenOutput out = run_layout_generator(g, x);
    torch::Tensor ce = layout_nll(composed_log_probs(out, x), target_idx);
    torch::Tensor total = weights.lambda1 * ce;
    double d_val = 0.0;

    if (adversarial) {
      torch::Tensor hard = gumbel_softmax(out.class_logits, opts.gumbel_tau, gen, /*hard=*/true, 1);
      torch::Tensor fake = out.focus * hard + (1.0 - out.focus) * x;

      d_opt.zero_grad();
      LsganLosses dl = lsgan_losses(d->forward(one_hot_indices(target_idx)), d->forward(fake.detach()));
      dl.d_loss.backward();
      d_opt.step();
      d_val = dl.d_loss.item<double>();

      torch::Tensor score = d->forward(fake);
      total = total + weights.lambda2 * lsgan_losses(score, score).g_loss;
    }
    g_opt.zero_grad();
    total.backward();
    g_opt.step();

    const double ce_val = ce.item<double>();
    r.ce_losses.push_back(ce_val);
    r.total_losses.push_back(total.item<double>());
    r.d_losses.push_back(d_val);
    if (opts.on_step) opts.on_step(step, ce_val);
  }
  g->eval();
  d->eval();
  r.meta = {{"steps", opts.steps},
            {"batch_size", batch},
            {"seed", opts.seed},
            {"gumbel_tau", opts.gumbel_tau},
            {"num_layouts", n},
            {"final_ce", r.ce_losses.back()},
            {"optimizer", to_json(opts.opt)},
            {"disc_optimizer", to_json(opts.disc_opt)}};
  return r;
}

std::optional<double> class_iou(const SemanticLayout& pred, const SemanticLayout& gt, int cls) {
  if (pred.width() != gt.width() || pred.height() != gt.height()) throw ShapeError("class_iou: dims differ");
  if (cls < 0 || cls >= kNumClasses) throw TaxonomyError("class_iou: invalid class " + std::to_string(cls));
  long inter = 0, uni = 0;
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      const bool a = pred.at(x, y) == cls, b = gt.at(x, y) == cls;
      inter += a && b;
      uni += a || b;
    }
  }
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double miou(const SemanticLayout& pred, const SemanticLayout& gt, std::optional<ClassSet> classes) {
  if (pred.width() != gt.width() || pred.height() != gt.height()) throw ShapeError("miou: dims differ");
  std::array<long, kNumClasses> inter{}, uni{};
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      const int a = pred.at(x, y), b = gt.at(x, y);
      if (a == b) {
        ++inter[static_cast<std::size_t>(a)];
        ++uni[static_cast<std::size_t>(a)];
      } else {
        ++uni[static_cast<std::size_t>(a)];
        ++uni[static_cast<std::size_t>(b)];
      }
    }
  }
  double sum = 0.0;
  int count = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (classes && !classes->contains(c)) continue;
    if (uni[static_cast<std::size_t>(c)] == 0) continue;
    sum += static_cast<double>(inter[static_cast<std::size_t>(c)]) / static_cast<double>(uni[static_cast<std::size_t>(c)]);
    ++count;
  }
  return count == 0 ? 1.0 : sum / count;
}

Checkpoint layout_gen_checkpoint(LayoutGenerator& g, const LayoutGenLossWeights& weights,
                                 const nlohmann::json& training_meta, LayoutDiscriminator* disc) {
  Checkpoint ck;
  ck.meta["kind"] = "layout_gen";
  ck.meta["config"] = to_json(g->cfg);
  ck.meta["loss_weights"] = {{"lambda1", weights.lambda1}, {"lambda2", weights.lambda2}};
  ck.meta["focus_threshold"] = 0.5;
  ck.meta["training"] = training_meta;
  export_module(*g, ck, "gen.");
  if (disc) export_module(**disc, ck, "disc.");
  return ck;
}

LayoutGenerator layout_gen_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", std::string()) != "layout_gen") throw IoError("checkpoint is not a layout generator checkpoint");
  LayoutGenerator g(layout_gen_config_from_json(ck.meta.at("config")));
  import_module(*g, ck, "gen.");
  g->eval();
  return g;
}

}  // namespace hsd

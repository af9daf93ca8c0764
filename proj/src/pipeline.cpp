#include "hsd/pipeline.hpp"

#include <string>

#include "hsd/errors.hpp"
#include "hsd/tensor_util.hpp"

namespace hsd {

namespace {

torch::Tensor bool_mask(const Mask& m) { return mask_to_tensor(m) > 0.5f; }

void check_source(const SwapSource& s, const SwapModels& models, const SwapConfig& cfg, const char* what) {
  const int f = models.codec->cfg.f;
  if (s.image.width() != s.layout.width() || s.image.height() != s.layout.height()) {
    throw ShapeError(std::string(what) + ": image and layout dims differ");
  }
  if (s.image.width() % f != 0 || s.image.height() % f != 0) {
    throw ShapeError(std::string(what) + ": dims not divisible by f = " + std::to_string(f));
  }
  if (cfg.image_size > 0 && (s.image.width() != cfg.image_size || s.image.height() != cfg.image_size)) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + " input");
  }
}

void check_models(const SwapModels& m) {
  if (m.codec->cfg.z_channels != m.ldm.denoiser_cfg.z_channels || m.codec->cfg.s_channels != m.ldm.denoiser_cfg.s_channels ||
      m.codec->cfg.f != m.ldm.codec_cfg.f) {
    throw ShapeError("codec and SG-LDM checkpoints disagree on latent or condition shape");
  }
}

void check_disjoint(const std::vector<torch::Tensor>& masks) {
  torch::Tensor cover = torch::zeros_like(masks.front(), torch::kInt32);
  for (const auto& m : masks) cover = cover + m.to(torch::kInt32);
  if (cover.max().item<int>() > 1) throw InvariantError("latent masks overlap; regions do not partition the frame");
}

// Progressive fusion: at every DDIM step the masked regions are overwritten with
// freshly forward-noised source latents before the denoiser sees the latent.
torch::Tensor fuse(SwapModels& models, const torch::Tensor& s, const std::vector<torch::Tensor>& z0s,
                   const std::vector<torch::Tensor>& masks, const SwapConfig& cfg) {
  const NoiseSchedule& sched = models.ldm.schedule;
  torch::Generator gen = make_generator(cfg.seed);
  torch::Tensor z = torch::randn(z0s.front().sizes(), gen);
  std::vector<torch::Tensor> noised(z0s.size());
  for (const DdimStep& st : ddim_plan(sched.T(), cfg.ddim_steps)) {
    for (std::size_t k = 0; k < z0s.size(); ++k) {
      noised[k] = forward_sample(z0s[k], st.t, torch::randn(z0s[k].sizes(), gen), sched);
    }
    check_disjoint(masks);
    torch::Tensor blended = z;
    for (std::size_t k = 0; k < z0s.size(); ++k) blended = torch::where(masks[k], noised[k], blended);
    if (cfg.on_step) cfg.on_step(FusionStep{st.t, st.t_prev, &blended, &noised, &masks});
    torch::Tensor eps = models.ldm.predict_noise(blended, torch::full({1}, static_cast<float>(st.t)), s);
    torch::Tensor eps_rand;
    if (cfg.eta > 0.0) eps_rand = torch::randn(z.sizes(), gen);
    z = ddim_step(blended, eps, st.t, st.t_prev, cfg.eta, sched, eps_rand);
  }
  return z;
}

}  // namespace

void SwapConfig::validate(const NoiseSchedule& sched) const {
  if (ddim_steps < 1 || ddim_steps > sched.T()) {
    throw ConfigError("ddim_steps = " + std::to_string(ddim_steps) + " outside [1, T = " + std::to_string(sched.T()) + "]");
  }
  if (eta < 0.0 || eta > 1.0) throw ConfigError("eta outside [0, 1]");
  if (image_size < 0) throw ConfigError("image_size must be >= 0");
}

nlohmann::json to_json(const SwapConfig& c) {
  return {{"ddim_steps", c.ddim_steps}, {"eta", c.eta}, {"seed", c.seed}, {"align_neck", c.align_neck},
          {"image_size", c.image_size}};
}

SwapConfig swap_config_from_json(const nlohmann::json& j) {
  SwapConfig c;
  c.ddim_steps = j.value("ddim_steps", c.ddim_steps);
  c.eta = j.value("eta", c.eta);
  c.seed = j.value("seed", c.seed);
  c.align_neck = j.value("align_neck", c.align_neck);
  c.image_size = j.value("image_size", c.image_size);
  return c;
}

torch::Tensor blend_latents(const torch::Tensor& z_rand, const torch::Tensor& z_head, const torch::Tensor& z_body,
                            const RegionMaskSet& masks) {
  if (z_rand.sizes() != z_head.sizes() || z_rand.sizes() != z_body.sizes()) throw ShapeError("blend_latents: latent shapes differ");
  if (z_rand.dim() != 4 || z_rand.size(2) != masks.height() || z_rand.size(3) != masks.width()) {
    throw ShapeError("blend_latents: masks do not match latent spatial dims");
  }
  return torch::where(bool_mask(masks.head()), z_head, torch::where(bool_mask(masks.body()), z_body, z_rand));
}

SwapResult swap_heads(const SwapSource& head, const SwapSource& body, SwapModels& models, const SwapConfig& cfg) {
  check_models(models);
  cfg.validate(models.ldm.schedule);
  check_source(head, models, cfg, "swap_heads head source");
  check_source(body, models, cfg, "swap_heads body source");
  if (head.image.width() != body.image.width() || head.image.height() != body.image.height()) {
    throw ShapeError("swap_heads: head and body sources differ in size");
  }

  SwapResult r;
  r.seed = cfg.seed;
  Image x1 = head.image;
  SemanticLayout l1 = head.layout;
  if (cfg.align_neck) {
    r.delta_w = neck_align(head.layout, body.layout, head.nose_y, body.nose_y).delta_w;
    if (r.delta_w != 0) {
      x1 = shift_horizontal(x1, r.delta_w, 0.0f);
      l1 = shift_horizontal(l1, r.delta_w);
    }
  }

  const RegionMaskSet masks = RegionMaskSet::from_head_body(region_mask(l1, ClassTaxonomy::head_group()),
                                                            region_mask(body.layout, ClassTaxonomy::body_group()));
  r.blended_layout = blend_layouts(l1, body.layout, masks);
  r.completed_layout = complete_layout(models.layout_gen, r.blended_layout);

  torch::NoGradGuard ng;
  torch::Tensor s = models.ldm.condition(std::span<const SemanticLayout>(&r.completed_layout, 1));
  const RegionMaskSet lat = masks.downsample(models.codec->cfg.f);
  torch::Tensor z = fuse(models, s, {models.codec->encode(x1), models.codec->encode(body.image)},
                         {bool_mask(lat.head()), bool_mask(lat.body())}, cfg);
  r.image = models.codec->decode_image(z);
  return r;
}

void ReplacementSpec::validate(std::size_t num_sources) const {
  if (num_sources < 1 || num_sources > 2) throw SpecError("replace_regions takes one or two sources");
  for (const auto& [src, group] : preserve_regions) {
    if (src < 1 || static_cast<std::size_t>(src) > num_sources) {
      throw SpecError("preserve region refers to source " + std::to_string(src));
    }
    for (const ClassSet& r : resample_regions) {
      if (group.intersects(r)) throw SpecError("a class group is both preserved and resampled");
    }
  }
  if (num_sources == 2 && (layout_source < 1 || layout_source > 2)) throw SpecError("layout_source must be 1 or 2");
}

ReplacementSpec fake_head_spec() {
  ReplacementSpec s;
  s.preserve_regions = {{1, ClassTaxonomy::body_group() | ClassSet{kBackground}}};
  s.resample_regions = {ClassTaxonomy::head_group() | ClassTaxonomy::neck_group()};
  return s;
}

ReplacementSpec preserve_all_spec() {
  ReplacementSpec s;
  s.preserve_regions = {{1, ClassSet::all()}};
  return s;
}

ReplacementSpec cross_skin_tone_spec() {
  const ClassSet limbs{kLeftArm, kRightArm, kLeftLeg, kRightLeg};
  ReplacementSpec s;
  s.preserve_regions = {{1, ClassTaxonomy::head_group()},
                        {2, (ClassTaxonomy::body_group() & ~limbs) | ClassSet{kBackground}}};
  s.resample_regions = {ClassTaxonomy::neck_group() | limbs};
  s.layout_source = 2;
  return s;
}

namespace {

struct RegionPlan {
  SemanticLayout blended;
  std::vector<Mask> source_masks;  // full resolution, one per source, disjoint
};

RegionPlan plan_regions(const std::vector<SwapSource>& sources, const ReplacementSpec& spec) {
  const int w = sources[0].layout.width(), h = sources[0].layout.height();
  RegionPlan p{SemanticLayout(w, h), std::vector<Mask>(sources.size(), Mask(w, h))};
  Mask taken(w, h);
  for (const auto& [src, group] : spec.preserve_regions) {
    const SemanticLayout& l = sources[static_cast<std::size_t>(src - 1)].layout;
    Mask& m = p.source_masks[static_cast<std::size_t>(src - 1)];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!taken.at(x, y) && group.contains(l.at(x, y))) {
          taken.set(x, y, true);
          m.set(x, y, true);
          p.blended.set(x, y, l.at(x, y));
        }
      }
    }
  }
  ClassSet resample;
  for (const ClassSet& r : spec.resample_regions) resample = resample | r;
  const SemanticLayout& base = sources[static_cast<std::size_t>(std::min<std::size_t>(sources.size(), spec.layout_source) - 1)].layout;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!taken.at(x, y) && resample.contains(base.at(x, y))) p.blended.set(x, y, base.at(x, y));
    }
  }
  return p;
}

}  // namespace

SemanticLayout replacement_condition(const std::vector<SwapSource>& sources, const ReplacementSpec& spec,
                                     LayoutGenerator& layout_gen, SemanticLayout* blended) {
  spec.validate(sources.size());
  if (sources.size() == 1) {
    if (blended) *blended = sources[0].layout;
    return sources[0].layout;
  }
  RegionPlan p = plan_regions(sources, spec);
  if (blended) *blended = p.blended;
  return complete_layout(layout_gen, p.blended);
}

SwapResult replace_regions(const std::vector<SwapSource>& sources, const ReplacementSpec& spec, SwapModels& models,
                           const SwapConfig& cfg) {
  spec.validate(sources.size());
  check_models(models);
  cfg.validate(models.ldm.schedule);
  for (const SwapSource& s : sources) check_source(s, models, cfg, "replace_regions source");
  for (const SwapSource& s : sources) {
    if (s.image.width() != sources[0].image.width() || s.image.height() != sources[0].image.height()) {
      throw ShapeError("replace_regions: sources differ in size");
    }
  }

  SwapResult r;
  r.seed = cfg.seed;
  const RegionPlan p = plan_regions(sources, spec);
  r.blended_layout = sources.size() == 1 ? sources[0].layout : p.blended;
  r.completed_layout = sources.size() == 1 ? sources[0].layout : complete_layout(models.layout_gen, p.blended);

  torch::NoGradGuard ng;
  torch::Tensor s = models.ldm.condition(std::span<const SemanticLayout>(&r.completed_layout, 1));
  std::vector<torch::Tensor> z0s, masks;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    z0s.push_back(models.codec->encode(sources[k].image));
    masks.push_back(bool_mask(downsample_mask(p.source_masks[k], models.codec->cfg.f)));
  }
  r.image = models.codec->decode_image(fuse(models, s, z0s, masks, cfg));
  return r;
}

SwapResult replace_regions(const SwapSource& x, const ReplacementSpec& spec, SwapModels& models, const SwapConfig& cfg) {
  return replace_regions(std::vector<SwapSource>{x}, spec, models, cfg);
}

}  // namespace hsd

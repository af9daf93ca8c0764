#include "hsd/app.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>

#include "hsd/corpus.hpp"
#include "hsd/errors.hpp"
#include "hsd/metrics.hpp"

namespace hsd {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json loop_json(const TrainLoopConfig& t) {
  return {{"steps", t.steps}, {"batch_size", t.batch_size}, {"optimizer", to_json(t.opt)}};
}

TrainLoopConfig loop_from_json(const json& j, TrainLoopConfig d) {
  d.steps = j.value("steps", d.steps);
  d.batch_size = j.value("batch_size", d.batch_size);
  if (j.contains("optimizer")) d.opt = optimizer_params_from_json(j.at("optimizer"), d.opt);
  return d;
}

// Keys whose values are published settings; every other key is a desk-scale choice.
const std::vector<std::string>& published_keys() {
  static const std::vector<std::string> keys{
      "/codec/f",
      "/codec_train/optimizer/beta1",
      "/codec_train/optimizer/beta2",
      "/ldm_train/optimizer/beta1",
      "/ldm_train/optimizer/beta2",
      "/layout_train/optimizer/beta1",
      "/layout_train/optimizer/beta2",
      "/layout_train/lambda1",
      "/layout_train/lambda2",
      "/swap/ddim_steps",
  };
  return keys;
}

void collect_leaves(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) collect_leaves(it.value(), prefix + "/" + it.key(), out);
  } else {
    out.push_back(prefix);
  }
}

json base_json(const RunConfig& c) {
  json lt = loop_json(c.layout_train);
  lt["lambda1"] = c.layout_weights.lambda1;
  lt["lambda2"] = c.layout_weights.lambda2;
  json ldm = loop_json(c.ldm_train);
  ldm["cover_probability"] = c.cover_probability;
  return {{"version", c.version},
          {"seed", c.seed},
          {"paths", {{"data", c.data_dir}, {"checkpoints", c.checkpoint_dir}, {"outputs", c.output_dir}}},
          {"codec", to_json(c.codec)},
          {"codec_train", loop_json(c.codec_train)},
          {"denoiser", to_json(c.denoiser)},
          {"schedule", to_json(c.schedule)},
          {"ldm_train", ldm},
          {"layout_gen", to_json(c.layout_gen)},
          {"layout_train", lt},
          {"swap", to_json(c.swap)}};
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::vector<fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<Image> load_images(const fs::path& dir) {
  std::vector<Image> out;
  for (const auto& f : png_files(dir)) out.push_back(load_png(f));
  return out;
}

std::vector<SemanticLayout> load_layouts(const fs::path& dir) {
  std::vector<SemanticLayout> out;
  for (const auto& f : png_files(dir)) out.push_back(load_layout_png(f));
  return out;
}

std::optional<double> nose_from_meta(const std::string& meta_path) {
  if (meta_path.empty()) return std::nullopt;
  json m = read_json(meta_path);
  if (m.contains("nose_y") && m["nose_y"].is_number()) return m["nose_y"].get<double>();
  return std::nullopt;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ShapeError*>(&e)) return "shape_error";
  if (dynamic_cast<const TaxonomyError*>(&e)) return "taxonomy_error";
  if (dynamic_cast<const RangeError*>(&e)) return "range_error";
  if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
  if (dynamic_cast<const EmptyRegionError*>(&e)) return "empty_region_error";
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical_error";
  if (dynamic_cast<const InsufficientDataError*>(&e)) return "insufficient_data_error";
  if (dynamic_cast<const InvariantError*>(&e)) return "invariant_error";
  if (dynamic_cast<const SpecError*>(&e)) return "spec_error";
  if (dynamic_cast<const PairingError*>(&e)) return "pairing_error";
  if (dynamic_cast<const ParamsError*>(&e)) return "params_error";
  if (dynamic_cast<const IoError*>(&e)) return "io_error";
  if (dynamic_cast<const ContractError*>(&e)) return "contract_error";
  return "runtime_error";
}

bool is_usage_error(const std::exception& e) {
  return dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SpecError*>(&e);
}

}  // namespace

void RunConfig::validate() const {
  if (version != kRunConfigVersion) throw ConfigError("unsupported config version " + std::to_string(version));
  codec.validate();
  layout_weights.validate();
  for (const TrainLoopConfig* t : {&codec_train, &ldm_train, &layout_train}) {
    if (t->steps < 1 || t->batch_size < 1) throw ConfigError("training steps and batch_size must be positive");
  }
  if (cover_probability < 0.0 || cover_probability > 1.0) throw ConfigError("cover_probability outside [0, 1]");
  swap.validate(make_schedule(schedule.T, schedule.beta_start, schedule.beta_end));
}

json to_json(const RunConfig& c) {
  json j = base_json(c);
  const json defaults = base_json(RunConfig{});
  std::vector<std::string> leaves;
  collect_leaves(j, "", leaves);
  json marked = json::array();
  for (const auto& key : leaves) {
    if (key == "/version" || key.rfind("/paths/", 0) == 0) continue;
    if (std::find(published_keys().begin(), published_keys().end(), key) != published_keys().end()) continue;
    const json::json_pointer p(key);
    if (defaults.contains(p) && defaults.at(p) == j.at(p)) marked.push_back(key);
  }
  j["desk_scale_defaults"] = marked;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.version = j.value("version", c.version);
    if (c.version != kRunConfigVersion) throw ConfigError("unsupported config version " + std::to_string(c.version));
    c.seed = j.value("seed", c.seed);
    if (j.contains("paths")) {
      const json& p = j.at("paths");
      c.data_dir = p.value("data", c.data_dir);
      c.checkpoint_dir = p.value("checkpoints", c.checkpoint_dir);
      c.output_dir = p.value("outputs", c.output_dir);
    }
    if (j.contains("codec")) c.codec = codec_config_from_json(j.at("codec"));
    if (j.contains("codec_train")) c.codec_train = loop_from_json(j.at("codec_train"), c.codec_train);
    if (j.contains("denoiser")) c.denoiser = denoiser_config_from_json(j.at("denoiser"));
    if (j.contains("schedule")) c.schedule = schedule_config_from_json(j.at("schedule"));
    if (j.contains("ldm_train")) {
      c.ldm_train = loop_from_json(j.at("ldm_train"), c.ldm_train);
      c.cover_probability = j.at("ldm_train").value("cover_probability", c.cover_probability);
    }
    if (j.contains("layout_gen")) c.layout_gen = layout_gen_config_from_json(j.at("layout_gen"));
    if (j.contains("layout_train")) {
      c.layout_train = loop_from_json(j.at("layout_train"), c.layout_train);
      c.layout_weights.lambda1 = j.at("layout_train").value("lambda1", c.layout_weights.lambda1);
      c.layout_weights.lambda2 = j.at("layout_train").value("lambda2", c.layout_weights.lambda2);
    }
    if (j.contains("swap")) c.swap = swap_config_from_json(j.at("swap"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_json(path)); }

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

json EvalReport::to_json() const {
  json j;
  for (const char* k : {"fid", "mask_fid", "focal_fid", "masked_ssim_head", "masked_ssim_body", "ids"}) {
    auto it = metrics.find(k);
    j[k] = it == metrics.end() ? json(nullptr) : json(it->second);
  }
  j["counts"] = counts;
  j["extractor"] = extractor_id;
  j["embedder"] = embedder_id;
  j["config_hash"] = config_hash;
  return j;
}

EvalReport evaluate(const EvalInputs& in, const json& config) {
  ToyExtractor extractor;
  ToyFaceEmbedder embedder;
  EvalReport r;
  r.extractor_id = extractor.id();
  r.embedder_id = embedder.id();
  r.config_hash = hsd::config_hash(config);
  r.counts["results"] = static_cast<long>(in.results.size());
  r.counts["refs"] = static_cast<long>(in.refs.size());

  r.metrics["fid"] = fid(in.results, in.refs, extractor);
  r.metrics["focal_fid"] = focal_fid(in.results, in.refs, extractor);
  const bool have_layouts = !in.result_layouts.empty() || !in.ref_layouts.empty();
  if (have_layouts) r.metrics["mask_fid"] = mask_fid(in.results, in.refs, in.result_layouts, in.ref_layouts, extractor);

  if (in.results.size() == in.refs.size()) {
    std::vector<double> ids;
    for (std::size_t i = 0; i < in.results.size(); ++i) ids.push_back(identity_similarity(in.results[i], in.refs[i], embedder));
    r.metrics["ids"] = mean(ids);
    r.counts["id_pairs"] = static_cast<long>(ids.size());
    if (in.result_layouts.size() == in.results.size()) {
      std::vector<double> head, body;
      for (std::size_t i = 0; i < in.results.size(); ++i) {
        const Mask mh = region_mask(in.result_layouts[i], ClassTaxonomy::head_group());
        const Mask mb = region_mask(in.result_layouts[i], ClassTaxonomy::body_group());
        if (mh.any()) head.push_back(masked_ssim(in.results[i], in.refs[i], mh));
        if (mb.any()) body.push_back(masked_ssim(in.results[i], in.refs[i], mb));
      }
      if (!head.empty()) r.metrics["masked_ssim_head"] = mean(head);
      if (!body.empty()) r.metrics["masked_ssim_body"] = mean(body);
      r.counts["ssim_pairs_head"] = static_cast<long>(head.size());
      r.counts["ssim_pairs_body"] = static_cast<long>(body.size());
    }
  }
  return r;
}

Image make_grid(const std::vector<GridTriple>& triples) {
  if (triples.empty()) throw ConfigError("grid: need at least one (head, body, result) triple");
  const int w = triples[0].head.width(), h = triples[0].head.height();
  for (const auto& t : triples) {
    for (const Image* im : {&t.head, &t.body, &t.result}) {
      if (im->width() != w || im->height() != h) throw ShapeError("grid: all images must share one size");
    }
  }
  Image out(3 * w, h * static_cast<int>(triples.size()));
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const Image* cells[3] = {&triples[i].head, &triples[i].body, &triples[i].result};
    for (int j = 0; j < 3; ++j) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          for (int c = 0; c < 3; ++c) out.at(j * w + x, static_cast<int>(i) * h + y, c) = cells[j]->at(x, y, c);
        }
      }
    }
  }
  return out;
}

namespace {

struct Context {
  fs::path root;
  RunConfig cfg;
  std::ostream& out;
  std::ostream& err;

  fs::path data() const { return root / cfg.data_dir; }
  fs::path ckpt(const char* name) const { return root / cfg.checkpoint_dir / name; }
  fs::path outputs() const { return root / cfg.output_dir; }
};

void progress(std::ostream& err, const char* what, int step, int total, double loss) {
  if (step == 1 || step % 100 == 0 || step == total) {
    err << what << " step " << step << "/" << total << " loss " << loss << std::endl;
  }
}

std::size_t train_count(std::size_t n, int holdout) {
  if (holdout < 0 || static_cast<std::size_t>(holdout) >= n) throw ConfigError("holdout must leave at least one sample");
  return n - static_cast<std::size_t>(holdout);
}

SwapModels load_models(const fs::path& codec, const fs::path& ldm, const fs::path& lg) {
  SwapModels m;
  m.codec = codec_from_checkpoint(Checkpoint::load(codec));
  m.ldm = sgldm_from_checkpoint(Checkpoint::load(ldm));
  m.layout_gen = layout_gen_from_checkpoint(Checkpoint::load(lg));
  return m;
}

void save_checkpoint_with_config(Checkpoint ck, const fs::path& path, const RunConfig& cfg) {
  ck.meta["run_config"] = to_json(cfg);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  ck.save(path);
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Head swapping with semantic-guided latent diffusion (desk scale)", "hsd"};
  app.require_subcommand(1);
  std::string config_path, out_root;
  app.add_option("--config", config_path, "JSON run config");
  app.add_option("--out-root", out_root, "Output root (overrides HSD_OUT)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  int gen_n = 2000, gen_size = 64;
  std::optional<std::uint64_t> gen_seed;
  std::string gen_out;
  gen->add_option("--n", gen_n, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--size", gen_size, "Image size in pixels");
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("--out", gen_out, "Corpus directory");

  // Training shared flags.
  struct TrainFlags {
    std::string data, out;
    std::optional<int> steps, batch;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
    int holdout = 0;
  };
  auto add_train = [](CLI::App* sc, TrainFlags& f) {
    sc->add_option("--data", f.data, "Corpus directory");
    sc->add_option("--out", f.out, "Checkpoint path");
    sc->add_option("--steps", f.steps, "Optimizer steps");
    sc->add_option("--batch-size", f.batch, "Minibatch size");
    sc->add_option("--lr", f.lr, "Adam learning rate");
    sc->add_option("--seed", f.seed, "Training seed");
    sc->add_option("--holdout", f.holdout, "Exclude the last N corpus samples");
  };
  auto* tc = app.add_subcommand("train-codec", "Train the image autoencoder");
  TrainFlags tcf;
  add_train(tc, tcf);
  auto* tl = app.add_subcommand("train-ldm", "Train the SG-LDM on frozen codec latents");
  TrainFlags tlf;
  std::string tl_codec;
  std::optional<double> tl_cover;
  add_train(tl, tlf);
  tl->add_option("--codec", tl_codec, "Codec checkpoint");
  tl->add_option("--cover-probability", tl_cover, "Head-cover augmentation probability");
  auto* tg = app.add_subcommand("train-layout-gen", "Train the layout generator");
  TrainFlags tgf;
  std::optional<double> tg_l1, tg_l2;
  add_train(tg, tgf);
  tg->add_option("--lambda1", tg_l1, "Cross-entropy weight");
  tg->add_option("--lambda2", tg_l2, "Adversarial weight");

  // Sampling shared flags.
  struct ModelFlags {
    std::string codec, ldm, layout_gen, out;
    std::optional<std::uint64_t> seed;
    std::optional<int> ddim_steps;
    std::optional<double> eta;
    bool debug = false;
  };
  auto add_models = [](CLI::App* sc, ModelFlags& f) {
    sc->add_option("--codec", f.codec, "Codec checkpoint");
    sc->add_option("--ldm", f.ldm, "SG-LDM checkpoint");
    sc->add_option("--layout-gen", f.layout_gen, "Layout generator checkpoint");
    sc->add_option("--out", f.out, "Output PNG");
    sc->add_option("--seed", f.seed, "Sampling seed");
    sc->add_option("--ddim-steps", f.ddim_steps, "DDIM steps");
    sc->add_option("--eta", f.eta, "DDIM eta");
    sc->add_flag("--debug-artifacts", f.debug, "Write intermediate layouts");
  };
  auto* sw = app.add_subcommand("swap", "Swap the head of one image onto the body of another");
  ModelFlags swf;
  std::string sw_head, sw_head_layout, sw_body, sw_body_layout, sw_head_meta, sw_body_meta;
  std::optional<double> sw_head_nose, sw_body_nose;
  bool sw_no_align = false;
  add_models(sw, swf);
  sw->add_option("--head", sw_head, "Head source image")->required();
  sw->add_option("--head-layout", sw_head_layout, "Head source layout")->required();
  sw->add_option("--body", sw_body, "Body source image")->required();
  sw->add_option("--body-layout", sw_body_layout, "Body source layout")->required();
  sw->add_option("--head-meta", sw_head_meta, "Head sidecar JSON with nose_y");
  sw->add_option("--body-meta", sw_body_meta, "Body sidecar JSON with nose_y");
  sw->add_option("--head-nose-y", sw_head_nose, "Head nose row");
  sw->add_option("--body-nose-y", sw_body_nose, "Body nose row");
  sw->add_flag("--no-align", sw_no_align, "Disable neck alignment");

  auto* rp = app.add_subcommand("replace", "Resample regions of an image");
  ModelFlags rpf;
  std::string rp_image, rp_layout, rp_image2, rp_layout2, rp_spec = "fake-head";
  add_models(rp, rpf);
  rp->add_option("--image", rp_image, "Source image")->required();
  rp->add_option("--layout", rp_layout, "Source layout")->required();
  rp->add_option("--image2", rp_image2, "Second source image");
  rp->add_option("--layout2", rp_layout2, "Second source layout");
  rp->add_option("--spec", rp_spec, "fake-head | preserve-all | cross-skin-tone")
      ->check(CLI::IsMember({"fake-head", "preserve-all", "cross-skin-tone"}));

  auto* ev = app.add_subcommand("eval", "Compute the metric suite");
  std::string ev_results, ev_refs, ev_lres, ev_lrefs, ev_out;
  ev->add_option("--results", ev_results, "Result image directory")->required();
  ev->add_option("--refs", ev_refs, "Reference image directory")->required();
  ev->add_option("--layouts-results", ev_lres, "Result layout directory");
  ev->add_option("--layouts-refs", ev_lrefs, "Reference layout directory");
  ev->add_option("--out", ev_out, "Report path");

  auto* gr = app.add_subcommand("grid", "Tile (head, body, result) triples");
  std::vector<std::string> gr_head, gr_body, gr_result;
  std::string gr_out;
  gr->add_option("--head", gr_head, "Head images");
  gr->add_option("--body", gr_body, "Body images");
  gr->add_option("--result", gr_result, "Result images");
  gr->add_option("--out", gr_out, "Grid PNG")->required();

  std::vector<const char*> argv{"hsd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << json{{"error", "usage_error"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    const char* env = std::getenv("HSD_OUT");
    Context ctx{!out_root.empty() ? fs::path(out_root) : (env && *env ? fs::path(env) : fs::path(".")),
                config_path.empty() ? RunConfig{} : load_run_config(config_path), out, err};
    RunConfig& cfg = ctx.cfg;

    if (*gen) {
      const fs::path dir = gen_out.empty() ? ctx.data() : fs::path(gen_out);
      const std::uint64_t seed = gen_seed.value_or(cfg.seed);
      if (gen_size < 32 || gen_size % 4 != 0) throw ConfigError("--size must be a multiple of 4 and at least 32");
      if (gen_n < 2) throw ConfigError("--n must be at least 2");
      generate_corpus(dir, gen_n, seed, gen_size);
      out << json{{"corpus", dir.string()}, {"n", gen_n}, {"seed", seed}, {"size", gen_size}}.dump() << "\n";
      return 0;
    }

    auto apply_train = [&](const TrainFlags& f, TrainLoopConfig& loop) {
      if (f.steps) loop.steps = *f.steps;
      if (f.batch) loop.batch_size = *f.batch;
      if (f.lr) loop.opt.lr = *f.lr;
      if (f.seed) cfg.seed = *f.seed;
    };

    if (*tc) {
      apply_train(tcf, cfg.codec_train);
      cfg.validate();
      const auto corpus = load_corpus(tcf.data.empty() ? ctx.data() : fs::path(tcf.data));
      std::vector<Image> images;
      for (std::size_t i = 0; i < train_count(corpus.size(), tcf.holdout); ++i) images.push_back(corpus[i].image);
      CodecTrainOptions o;
      o.steps = cfg.codec_train.steps;
      o.batch_size = cfg.codec_train.batch_size;
      o.opt = cfg.codec_train.opt;
      o.seed = cfg.seed;
      o.on_step = [&](int s, double l) { progress(err, "codec", s, o.steps, l); };
      CodecTrainResult r = train_codec(images, cfg.codec, o);
      const fs::path path = tcf.out.empty() ? ctx.ckpt("codec.ckpt") : fs::path(tcf.out);
      save_checkpoint_with_config(codec_checkpoint(r.codec, r.meta), path, cfg);
      write_json(path.string() + ".losses.json", {{"loss", r.losses}});
      out << json{{"checkpoint", path.string()}, {"final_loss", r.losses.back()}}.dump() << "\n";
      return 0;
    }

    if (*tl) {
      apply_train(tlf, cfg.ldm_train);
      if (tl_cover) cfg.cover_probability = *tl_cover;
      cfg.validate();
      Codec codec = codec_from_checkpoint(Checkpoint::load(tl_codec.empty() ? ctx.ckpt("codec.ckpt") : fs::path(tl_codec)));
      const auto corpus = load_corpus(tlf.data.empty() ? ctx.data() : fs::path(tlf.data));
      std::vector<Image> images;
      std::vector<SemanticLayout> layouts;
      for (std::size_t i = 0; i < train_count(corpus.size(), tlf.holdout); ++i) {
        images.push_back(corpus[i].image);
        layouts.push_back(corpus[i].layout);
      }
      SgLdmTrainOptions o;
      o.steps = cfg.ldm_train.steps;
      o.batch_size = cfg.ldm_train.batch_size;
      o.opt = cfg.ldm_train.opt;
      o.cover_probability = cfg.cover_probability;
      o.seed = cfg.seed;
      o.on_step = [&](int s, double l) { progress(err, "sgldm", s, o.steps, l); };
      SgLdmTrainResult r = train_sgldm(codec, images, layouts, cfg.denoiser, cfg.schedule, o);
      const fs::path path = tlf.out.empty() ? ctx.ckpt("sgldm.ckpt") : fs::path(tlf.out);
      save_checkpoint_with_config(sgldm_checkpoint(r.model, r.meta), path, cfg);
      write_json(path.string() + ".losses.json", {{"loss", r.losses}, {"moving_average", r.moving_average}});
      out << json{{"checkpoint", path.string()}, {"final_moving_average", r.moving_average.back()}}.dump() << "\n";
      return 0;
    }

    if (*tg) {
      apply_train(tgf, cfg.layout_train);
      if (tg_l1) cfg.layout_weights.lambda1 = *tg_l1;
      if (tg_l2) cfg.layout_weights.lambda2 = *tg_l2;
      cfg.validate();
      const auto corpus = load_corpus(tgf.data.empty() ? ctx.data() : fs::path(tgf.data));
      std::vector<SemanticLayout> layouts;
      for (std::size_t i = 0; i < train_count(corpus.size(), tgf.holdout); ++i) layouts.push_back(corpus[i].layout);
      LayoutGenTrainOptions o;
      o.steps = cfg.layout_train.steps;
      o.batch_size = cfg.layout_train.batch_size;
      o.opt = cfg.layout_train.opt;
      o.seed = cfg.seed;
      o.on_step = [&](int s, double l) { progress(err, "layout_gen", s, o.steps, l); };
      LayoutGenTrainResult r = train_layout_generator(layouts, cfg.layout_gen, cfg.layout_weights, o);
      const fs::path path = tgf.out.empty() ? ctx.ckpt("layout_gen.ckpt") : fs::path(tgf.out);
      save_checkpoint_with_config(layout_gen_checkpoint(r.generator, cfg.layout_weights, r.meta, &r.discriminator), path, cfg);
      write_json(path.string() + ".losses.json",
                 {{"ce", r.ce_losses}, {"total", r.total_losses}, {"discriminator", r.d_losses}});
      out << json{{"checkpoint", path.string()}, {"final_ce", r.ce_losses.back()}}.dump() << "\n";
      return 0;
    }

    if (*sw || *rp) {
      ModelFlags& f = *sw ? swf : rpf;
      if (f.seed) cfg.swap.seed = *f.seed;
      if (f.ddim_steps) cfg.swap.ddim_steps = *f.ddim_steps;
      if (f.eta) cfg.swap.eta = *f.eta;
      if (*sw && sw_no_align) cfg.swap.align_neck = false;
      SwapModels models = load_models(f.codec.empty() ? ctx.ckpt("codec.ckpt") : fs::path(f.codec),
                                      f.ldm.empty() ? ctx.ckpt("sgldm.ckpt") : fs::path(f.ldm),
                                      f.layout_gen.empty() ? ctx.ckpt("layout_gen.ckpt") : fs::path(f.layout_gen));
      cfg.validate();
      const auto t0 = std::chrono::steady_clock::now();
      SwapResult r;
      json inputs;
      if (*sw) {
        SwapSource head{load_png(sw_head), load_layout_png(sw_head_layout),
                        sw_head_nose ? sw_head_nose : nose_from_meta(sw_head_meta)};
        SwapSource body{load_png(sw_body), load_layout_png(sw_body_layout),
                        sw_body_nose ? sw_body_nose : nose_from_meta(sw_body_meta)};
        r = swap_heads(head, body, models, cfg.swap);
        inputs = {{"head", sw_head}, {"head_layout", sw_head_layout}, {"body", sw_body}, {"body_layout", sw_body_layout}};
      } else {
        std::vector<SwapSource> sources{{load_png(rp_image), load_layout_png(rp_layout), std::nullopt}};
        inputs = {{"image", rp_image}, {"layout", rp_layout}, {"spec", rp_spec}};
        if (!rp_image2.empty() || !rp_layout2.empty()) {
          if (rp_image2.empty() || rp_layout2.empty()) throw ConfigError("--image2 and --layout2 go together");
          sources.push_back({load_png(rp_image2), load_layout_png(rp_layout2), std::nullopt});
          inputs["image2"] = rp_image2;
          inputs["layout2"] = rp_layout2;
        }
        const ReplacementSpec spec = rp_spec == "fake-head"      ? fake_head_spec()
                                     : rp_spec == "preserve-all" ? preserve_all_spec()
                                                                 : cross_skin_tone_spec();
        if (rp_spec == "cross-skin-tone" && sources.size() != 2) throw ConfigError("cross-skin-tone needs --image2");
        r = replace_regions(sources, spec, models, cfg.swap);
      }
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const char* stem = *sw ? "swap" : "replace";
      const fs::path png = f.out.empty() ? ctx.outputs() / (std::string(stem) + "_" + std::to_string(cfg.swap.seed) + ".png")
                                         : fs::path(f.out);
      if (png.has_parent_path()) fs::create_directories(png.parent_path());
      save_png(r.image, png);
      json side{{"output", png.string()}, {"delta_w", r.delta_w}, {"seed", r.seed},
                {"timing", {{"seconds", seconds}}}, {"inputs", inputs}, {"config", to_json(cfg)}};
      if (f.debug) {
        fs::path base = png;
        base.replace_extension();
        const fs::path bl = base.string() + "_blended_layout.png", cl = base.string() + "_completed_layout.png";
        save_layout_png(r.blended_layout, bl);
        save_layout_png(r.completed_layout, cl);
        side["artifacts"] = {{"blended_layout", bl.string()}, {"completed_layout", cl.string()}};
      }
      fs::path side_path = png;
      side_path.replace_extension(".json");
      write_json(side_path, side);
      out << json{{"output", png.string()}, {"sidecar", side_path.string()}, {"delta_w", r.delta_w}}.dump() << "\n";
      return 0;
    }

    if (*ev) {
      EvalInputs in{load_images(ev_results), load_images(ev_refs), {}, {}};
      if (!ev_lres.empty()) in.result_layouts = load_layouts(ev_lres);
      if (!ev_lrefs.empty()) in.ref_layouts = load_layouts(ev_lrefs);
      if (in.result_layouts.empty() != in.ref_layouts.empty()) {
        throw ConfigError("--layouts-results and --layouts-refs go together");
      }
      json echo = to_json(cfg);
      echo["eval_inputs"] = {{"results", ev_results}, {"refs", ev_refs}, {"layouts_results", ev_lres}, {"layouts_refs", ev_lrefs}};
      EvalReport rep = evaluate(in, echo);
      json j = rep.to_json();
      j["config"] = echo;
      const fs::path path = ev_out.empty() ? ctx.outputs() / "eval_report.json" : fs::path(ev_out);
      write_json(path, j);
      out << j.dump() << "\n";
      return 0;
    }

    if (*gr) {
      if (gr_head.size() != gr_body.size() || gr_head.size() != gr_result.size()) {
        throw ConfigError("grid: --head, --body and --result must be given the same number of times");
      }
      std::vector<GridTriple> triples;
      for (std::size_t i = 0; i < gr_head.size(); ++i) {
        triples.push_back({load_png(gr_head[i]), load_png(gr_body[i]), load_png(gr_result[i])});
      }
      const Image g = make_grid(triples);
      fs::path p(gr_out);
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      save_png(g, p);
      out << json{{"grid", p.string()}, {"width", g.width()}, {"height", g.height()}}.dump() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    err << json{{"error", error_kind(e)}, {"message", e.what()}}.dump() << "\n";
    return is_usage_error(e) ? 2 : 1;
  }
  return 2;
}

}  // namespace hsd

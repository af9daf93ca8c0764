#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <random>

#include "acceptance.hpp"
#include "hsd/app.hpp"
#include "hsd/corpus.hpp"
#include "hsd/errors.hpp"
#include "hsd/metrics.hpp"

namespace hsd::acceptance {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kCorpusSize = 2000;
constexpr int kHeldOut = 200;
constexpr int kImageSize = 64;

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

// Runs the CLI as a separate process, appending its output to `log`.
int run_cli(const Env& env, const std::vector<std::string>& args, const fs::path& log) {
  std::string cmd = quote(env.cli.string()) + " --out-root " + quote(env.work.string()) + " --config " +
                    quote((env.work / "config.json").string());
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " >> " + quote(log.string()) + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  return json::parse(in);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double masked_psnr(const Image& a, const Image& b, const Mask& m) {
  double se = 0.0;
  long n = 0;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      if (!m.at(x, y)) continue;
      for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(a.at(x, y, c)) - b.at(x, y, c);
        se += d * d;
        ++n;
      }
    }
  }
  if (n == 0) throw EmptyRegionError("masked_psnr: empty mask");
  return 10.0 * std::log10(1.0 / std::max(se / static_cast<double>(n), 1e-12));
}

double masked_abs_diff(const Image& a, const Image& b, const Mask& m) {
  double s = 0.0;
  long n = 0;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      if (!m.at(x, y)) continue;
      for (int c = 0; c < 3; ++c) s += std::abs(static_cast<double>(a.at(x, y, c)) - b.at(x, y, c));
      n += 3;
    }
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

fs::path ckpt(const Env& env, const char* name) { return env.work / "checkpoints" / name; }

SwapModels load_models(const Env& env) {
  SwapModels m;
  m.codec = codec_from_checkpoint(Checkpoint::load(ckpt(env, "codec.ckpt")));
  m.ldm = sgldm_from_checkpoint(Checkpoint::load(ckpt(env, "sgldm.ckpt")));
  m.layout_gen = layout_gen_from_checkpoint(Checkpoint::load(ckpt(env, "layout_gen.ckpt")));
  return m;
}

std::vector<CorpusEntry> held_out(const Env& env) {
  std::vector<CorpusEntry> all = load_corpus(env.work / "corpus");
  if (all.size() != static_cast<std::size_t>(kCorpusSize)) throw InsufficientDataError("corpus size mismatch");
  return {std::make_move_iterator(all.end() - kHeldOut), std::make_move_iterator(all.end())};
}

SwapSource source(const CorpusEntry& e) { return {e.image, e.layout, e.nose_y}; }

// Every file below `dir`, keyed by relative path. JSON sidecars lose their timing block.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (e.path().extension() == ".json") {
      json j = json::parse(bytes);
      if (j.is_object() && j.contains("timing")) {
        j.erase("timing");
        bytes = j.dump(2);
      }
    }
    out[fs::relative(e.path(), dir).string()] = std::move(bytes);
  }
  return out;
}

}  // namespace

void desk_training(Outcome& o, const Env& env) {
  fs::create_directories(env.work / "logs");
  RunConfig cfg;
  cfg.seed = env.seed;
  cfg.data_dir = "corpus";
  {
    std::ofstream out(env.work / "config.json");
    out << to_json(cfg).dump(2) << "\n";
  }
  const fs::path logs = env.work / "logs";
  const std::string holdout = std::to_string(kHeldOut);
  struct Stage {
    const char* name;
    std::vector<std::string> args;
  };
  const std::vector<Stage> stages{
      {"gen-data", {"gen-data", "--n", std::to_string(kCorpusSize), "--size", std::to_string(kImageSize)}},
      {"train-codec", {"train-codec", "--holdout", holdout}},
      {"train-ldm", {"train-ldm", "--holdout", holdout}},
      {"train-layout-gen", {"train-layout-gen", "--holdout", holdout}},
  };
  for (const Stage& s : stages) {
    const int rc = run_cli(env, s.args, logs / (std::string(s.name) + ".log"));
    o.require(rc == 0, std::string(s.name) + " exit code " + Outcome::fmt(rc));
    if (rc != 0) return;
  }

  const std::vector<CorpusEntry> held = held_out(env);
  SwapModels m = load_models(env);
  m.codec->eval();
  std::vector<double> psnrs;
  {
    torch::NoGradGuard ng;
    for (const auto& e : held) psnrs.push_back(psnr(m.codec->decode_image(m.codec->encode(e.image)), e.image));
  }
  const double p = mean(psnrs);
  o.require(p >= 25.0, "codec held-out PSNR " + Outcome::fmt(p) + " dB (>= 25)");

  const json losses = read_json(ckpt(env, "sgldm.ckpt").string() + ".losses.json");
  const std::vector<double> ma = losses.at("moving_average").get<std::vector<double>>();
  o.require(ma.size() >= 3000, "SG-LDM trained for " + Outcome::fmt(ma.size()) + " steps");
  if (ma.size() >= 3000) {
    const double ref = ma[99], end = ma[2999];
    int crossed = -1;
    for (std::size_t i = 100; i < 3000 && crossed < 0; ++i) {
      if (ma[i] < 0.5 * ref) crossed = static_cast<int>(i) + 1;
    }
    o.require(end < 0.5 * ref, "SG-LDM moving average " + Outcome::fmt(ref) + " at step 100, " + Outcome::fmt(end) +
                                   " at step 3000 (ratio " + Outcome::fmt(end / ref) + ", below 0.5 from step " +
                                   Outcome::fmt(crossed) + ")");
  }

  std::vector<double> ious;
  for (std::size_t i = 0; i < held.size(); ++i) {
    const SemanticLayout corrupted = corrupt_layout(held[i].layout, held[(i + 1) % held.size()].layout);
    ious.push_back(miou(complete_layout(m.layout_gen, corrupted), held[i].layout));
  }
  const double mi = mean(ious);
  o.require(mi >= 0.85, "layout generator held-out mIoU " + Outcome::fmt(mi) + " (>= 0.85)");
}

void swap_properties(Outcome& o, const Env& env) {
  const std::vector<CorpusEntry> held = held_out(env);
  SwapModels m = load_models(env);
  const ClassSet& head = ClassTaxonomy::head_group();
  const ClassSet& body = ClassTaxonomy::body_group();
  SwapConfig cfg;

  std::vector<double> self;
  for (int i = 0; i < 10; ++i) {
    cfg.seed = static_cast<std::uint64_t>(i);
    const SwapSource x = source(held[i]);
    const SwapResult r = swap_heads(x, x, m, cfg);
    self.push_back(masked_psnr(r.image, x.image, region_mask(x.layout, head | body)));
  }
  o.require(mean(self) >= 22.0, "self-swap head+body PSNR " + Outcome::fmt(mean(self)) + " dB over 10 samples (>= 22)");

  cfg.seed = 77;
  const SwapResult a = swap_heads(source(held[0]), source(held[1]), m, cfg);
  const SwapResult b = swap_heads(source(held[0]), source(held[1]), m, cfg);
  o.require(a.image == b.image && a.completed_layout == b.completed_layout, "eta=0 swap bit-identical across reruns");

  std::mt19937_64 rng(env.seed ^ 0x5a5a);
  std::uniform_int_distribution<std::size_t> pick(0, held.size() - 1);
  std::vector<double> agree;
  for (int k = 0; k < 50; ++k) {
    std::size_t i = pick(rng), j = pick(rng);
    while (j == i) j = pick(rng);
    cfg.seed = static_cast<std::uint64_t>(k);
    const SwapResult r = swap_heads(source(held[i]), source(held[j]), m, cfg);
    agree.push_back(miou(decode_colors(r.image), r.completed_layout));
  }
  o.require(mean(agree) >= 0.6, "decoded output vs completed layout mIoU " + Outcome::fmt(mean(agree)) + " over 50 pairs (>= 0.6)");

  std::vector<double> kept, varied;
  for (int i = 0; i < 10; ++i) {
    const SwapSource x = source(held[20 + i]);
    cfg.seed = 1;
    const SwapResult r1 = replace_regions(x, fake_head_spec(), m, cfg);
    cfg.seed = 2;
    const SwapResult r2 = replace_regions(x, fake_head_spec(), m, cfg);
    const Mask bm = region_mask(x.layout, body);
    kept.push_back(0.5 * (masked_psnr(r1.image, x.image, bm) + masked_psnr(r2.image, x.image, bm)));
    varied.push_back(masked_abs_diff(r1.image, r2.image, region_mask(x.layout, head)));
  }
  o.require(mean(kept) >= 22.0, "fake-head body PSNR " + Outcome::fmt(mean(kept)) + " dB (>= 22)");
  o.require(mean(varied) > 0.01, "fake-head head region seed 1 vs 2 mean abs diff " + Outcome::fmt(mean(varied)) + " (> 0.01)");
}

void reproducibility(Outcome& o, const Env& env) {
  const fs::path dir = env.work / "repro";
  const fs::path log = env.work / "logs" / "repro.log";
  std::map<std::string, std::string> first;
  for (int round = 0; round < 2; ++round) {
    fs::remove_all(dir);
    fs::create_directories(dir / "swaps");
    bool ok = run_cli(env, {"gen-data", "--n", "16", "--size", std::to_string(kImageSize), "--seed", "7", "--out",
                            (dir / "corpus").string()},
                      log) == 0;
    for (int i = 0; i < 4 && ok; ++i) {
      char h[16], b[16];
      std::snprintf(h, sizeof h, "%06d", i);
      std::snprintf(b, sizeof b, "%06d", i + 4);
      const fs::path c = dir / "corpus";
      ok = run_cli(env,
                   {"swap", "--head", (c / "images" / (std::string(h) + ".png")).string(), "--head-layout",
                    (c / "layouts" / (std::string(h) + ".png")).string(), "--head-meta",
                    (c / "meta" / (std::string(h) + ".json")).string(), "--body",
                    (c / "images" / (std::string(b) + ".png")).string(), "--body-layout",
                    (c / "layouts" / (std::string(b) + ".png")).string(), "--body-meta",
                    (c / "meta" / (std::string(b) + ".json")).string(), "--seed", std::to_string(100 + i), "--out",
                    (dir / "swaps" / ("swap_" + std::to_string(i) + ".png")).string()},
                   log) == 0;
    }
    ok = ok && run_cli(env, {"eval", "--results", (dir / "swaps").string(), "--refs", (dir / "corpus" / "images").string(),
                             "--out", (dir / "eval_swaps.json").string()},
                       log) == 0;
    ok = ok && run_cli(env, {"eval", "--results", (dir / "corpus" / "images").string(), "--refs",
                             (dir / "corpus" / "images").string(), "--layouts-results",
                             (dir / "corpus" / "layouts").string(), "--layouts-refs",
                             (dir / "corpus" / "layouts").string(), "--out", (dir / "eval_self.json").string()},
                       log) == 0;
    o.require(ok, "round " + Outcome::fmt(round + 1) + " of gen-data, swap and eval ran cleanly");
    if (!ok) return;
    if (round == 0) {
      first = snapshot(dir);
      continue;
    }
    const auto second = snapshot(dir);
    int differing = 0;
    for (const auto& [name, bytes] : first) {
      auto it = second.find(name);
      if (it == second.end() || it->second != bytes) ++differing;
    }
    if (second.size() != first.size()) ++differing;
    o.require(differing == 0, Outcome::fmt(first.size()) + " artifacts compared byte for byte, " + Outcome::fmt(differing) +
                                  " differ (sidecar timing excluded)");
  }
}

}  // namespace hsd::acceptance

// Acceptance runner: one pass/fail line per criterion.
#include <chrono>
#include <functional>
#include <iostream>

#include <CLI11.hpp>

#include "acceptance.hpp"

using namespace hsd::acceptance;

namespace {

struct Criterion {
  int id;
  const char* title;
  double limit_seconds;  // 0: no runtime bound
  std::function<void(Outcome&, const Env&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-8", "hsd_acceptance"};
  std::vector<int> ids;
  Env env;
  env.work = "acceptance_work";
#ifdef HSD_CLI_PATH
  env.cli = HSD_CLI_PATH;
#endif
  std::string work = env.work.string(), cli = env.cli.string();
  app.add_option("criteria", ids, "Criteria to run (default: all)")->check(CLI::Range(1, 8));
  app.add_option("--work", work, "Directory for the desk-scale corpus and checkpoints");
  app.add_option("--cli", cli, "Path to the hsd executable");
  app.add_option("--seed", env.seed, "Seed for the desk-scale runs");
  CLI11_PARSE(app, argc, argv);
  env.work = std::filesystem::absolute(work);
  env.cli = cli;
  std::filesystem::create_directories(env.work);

  const std::vector<Criterion> all{
      {1, "diffusion math", 120, [](Outcome& o, const Env&) { diffusion_math(o); }},
      {2, "blending and partition", 60, [](Outcome& o, const Env&) { blending_partition(o); }},
      {3, "augmentation and alignment", 60, [](Outcome& o, const Env&) { augmentation_alignment(o); }},
      {4, "layout generator", 180, [](Outcome& o, const Env&) { layout_generator_suite(o); }},
      {5, "metrics", 60, [](Outcome& o, const Env&) { metrics_suite(o); }},
      {6, "desk-scale training", 8 * 3600, desk_training},
      {7, "end-to-end swap properties", 15 * 60, swap_properties},
      {8, "reproducibility", 0, reproducibility},
  };
  if (ids.empty()) {
    for (const auto& c : all) ids.push_back(c.id);
  }

  bool all_pass = true;
  for (int id : ids) {
    const Criterion& c = all[static_cast<std::size_t>(id - 1)];
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o, env);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_seconds > 0) {
      o.require(secs <= c.limit_seconds, "runtime " + Outcome::fmt(secs) + " s (limit " + Outcome::fmt(c.limit_seconds) + " s)");
    } else {
      o.note("runtime " + Outcome::fmt(secs) + " s");
    }
    std::string detail;
    for (const auto& n : o.notes()) detail += (detail.empty() ? "" : "; ") + n;
    std::cout << "criterion " << c.id << " " << (o.pass() ? "PASS" : "FAIL") << " [" << c.title << "] " << detail
              << std::endl;
    all_pass = all_pass && o.pass();
  }
  return all_pass ? 0 : 1;
}

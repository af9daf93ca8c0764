#pragma once

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace hsd::acceptance {

/// Collects the measured quantities of one criterion and whether each met its threshold.
class Outcome {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok) pass_ = false;
    notes_.push_back((ok ? "" : "FAILED ") + what);
  }
  template <class T>
  static std::string fmt(const T& v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
  }
  void note(const std::string& what) { notes_.push_back(what); }
  bool pass() const { return pass_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  bool pass_ = true;
  std::vector<std::string> notes_;
};

struct Env {
  std::filesystem::path work;  // desk-scale corpus, checkpoints and CLI reruns
  std::filesystem::path cli;   // hsd executable
  std::uint64_t seed = 0;
};

void diffusion_math(Outcome& o);
void blending_partition(Outcome& o);
void augmentation_alignment(Outcome& o);
void layout_generator_suite(Outcome& o);
void metrics_suite(Outcome& o);
void desk_training(Outcome& o, const Env& env);
void swap_properties(Outcome& o, const Env& env);
void reproducibility(Outcome& o, const Env& env);

}  // namespace hsd::acceptance

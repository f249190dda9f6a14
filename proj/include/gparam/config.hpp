#pragma once

#include <cstdint>
#include <string>

#include "gparam/ram.hpp"
#include "gparam/tensor.hpp"

namespace gparam {

// Flat, typed key=value run configuration with section prefixes
// (model.dim=32). '#' starts a comment; blank lines are ignored; unknown keys
// are rejected by name.
struct RunConfig {
  // run
  std::string regime = "train-discrete";  // pretrain-grasp|train-discrete|train-continuous
  std::string variant = "gpa-ram";        // gpa-ram|ram|gpa-attn|attn
  uint64_t seed = 0;
  std::string out = "run_out";

  // model (shared perception geometry; chunk/k_exec apply to the continuous regime)
  int64_t dim = 32;
  int64_t patch = 8;
  int64_t heads = 4;
  int views = 2;
  int height = 32, width = 32;
  double zoom = 4.0;
  double sigma = 1.5;
  int64_t chunk = 20;
  int64_t k_exec = 10;

  // data
  std::string dataset;  // .gprd path; output of gen-data, input of train/eval
  std::string task = "pick-place";
  int demos = 100;
  uint64_t demo_seed0 = 0;
  int hz = 50;

  // opt
  double lr_max = 2e-3;
  double lr_min = 2e-5;
  int epochs = 30;
  int batch = 8;
  int pretrain_epochs = 4;  // grasp-detector epochs folded into train-*

  // eval
  int episodes = 50;
  uint64_t eval_seed0 = 1000;
  int max_steps = 8;    // discrete: keyframe predictions per episode
  int horizon = 600;    // continuous: world steps per episode
  int per_epoch = 0;    // episodes evaluated per epoch for best-checkpoint
                        // selection; 0 selects best by training loss

  bool mamba() const { return variant == "gpa-ram" || variant == "ram"; }
  bool use_gpa() const { return variant == "gpa-ram" || variant == "gpa-attn"; }

  // Perception geometry for the chosen variant. Discrete stages use language
  // conditioning and one arm; the continuous encoder uses neither.
  RamConfig ram_config(int n_arms, bool use_language) const;

  void validate() const;       // throws std::invalid_argument
  std::string to_text() const; // round-trips through parse_config_text
};

// Throws std::invalid_argument on malformed lines, unknown keys or bad values.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// Applies one key=value override using the same key space as the file format.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace gparam

#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gfn/environments.hpp"
#include "gfn/training.hpp"

namespace gfn::cli {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EnvConfig {
  std::string kind;  // "grid" | "sequence"
  // grid
  int H = 0;
  int n_terms = 1000;
  double freq_max = 4.0;  // frequencies freq_max * k / n_terms
  double c = -0.5, d = 0.5;
  double beta = 1.5;
  double floor = 1e-8;
  // sequence
  int n = 0;
  int num_modes = 0;
  uint64_t mode_seed = 0;
  std::string modes_file;
};

struct RunConfig {
  std::string label;
  std::string out_dir;  // empty -> $GFN_OUT_ROOT/<label>
  EnvConfig env;
  train::TrainConfig train;
  std::string raw;  // exact input text; snapshotted byte-for-byte
};

// Parses and schema-validates; unknown keys anywhere are rejected.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Built-in hyperparameter presets (also shipped under presets/ as files).
const std::map<std::string, std::string>& builtin_presets();
RunConfig load_preset(const std::string& name);

// Instantiates the environment; for sequences the sampled or imported mode
// set is returned through `modes` so the harness can export it.
std::unique_ptr<env::Env> make_env(const EnvConfig& cfg, env::ModeRewardParams* modes = nullptr);

// Hash of the canonicalized env section; compare requires it to match.
std::string env_hash(const RunConfig& cfg);

}  // namespace gfn::cli

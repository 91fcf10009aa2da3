#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gfn/config.hpp"

namespace gfn::cli {

// Git-style content hash (SHA-1 over a blob header plus the bytes).
std::string git_blob_sha1(const std::string& bytes);
std::string sha1_hex(const std::string& bytes);

std::string output_root();  // $GFN_OUT_ROOT or "runs"

struct TrainOutcome {
  std::string artifact_dir;
  train::RunSummary summary;
};

// Runs training into an artifact directory: config snapshot, metrics.csv,
// checkpoint.bin, summary.json (+ modes.txt / dp_eval.csv where applicable).
TrainOutcome cmd_train(const RunConfig& cfg, bool resume = false,
                       const std::string& out_dir_override = "");

struct EvalOutcome {
  double windowed_metric = 0.0;       // L1 (grid) or modes discovered (sequences)
  std::optional<double> exact_mixture_l1;   // --exact, grid only
  std::optional<double> exact_member0_l1;
  long trajectories = 0;
};

// Recomputes evaluation from a finished artifact; with `exact`, runs the
// dynamic-programming oracle per member and for the uniform mixture, and
// exports the distribution tables as CSV.
EvalOutcome cmd_eval(const std::string& artifact_dir, bool exact);

struct ArtifactInfo {
  std::string dir, label, strategy, env_hash;
  uint64_t seed = 0;
  // Metric curve at evaluation points: (trajectories_seen, L1 or modes).
  std::vector<std::pair<long, double>> curve;
  double final_metric = 0.0;
  bool higher_is_better = false;  // modes count up, L1 down
};

ArtifactInfo load_artifact(const std::string& dir);

struct ComparisonGroup {
  std::string strategy;
  int runs = 0;
  std::vector<double> mean, stderr_;  // per grid point
  double final_mean = 0.0, final_stderr = 0.0;
  std::vector<double> finals;
};

struct Comparison {
  std::vector<long> grid;  // common checkpoints (trajectories seen)
  std::vector<ComparisonGroup> groups;
  // Pairwise difference of the two runs' resampled curves when exactly two
  // artifacts were given.
  std::vector<double> pair_diff;
  bool higher_is_better = false;
};

// Loads >= 2 artifacts, requires matching environment hashes, groups by
// strategy, resamples every curve onto a common checkpoint grid and reports
// mean / standard error per group.
Comparison cmd_compare(const std::vector<std::string>& dirs,
                       const std::string& out_csv = "");

struct SweepRun {
  std::string dir, label;
  bool ok = false;
  double final_metric = 0.0;
  std::string error;
};

struct SweepOutcome {
  std::string sweep_dir;
  std::vector<SweepRun> runs;        // execution order
  std::vector<SweepRun> leaderboard;  // successful runs, best first
};

// Cartesian grid over the axes in the sweep spec x seeds; failures are
// recorded and the sweep continues.
SweepOutcome cmd_sweep(const std::string& spec_text,
                       const std::string& out_dir_override = "");
SweepOutcome cmd_sweep_file(const std::string& spec_path,
                            const std::string& out_dir_override = "");

// Writes the built-in presets as JSON files into a directory.
void write_preset_files(const std::string& dir);

}  // namespace gfn::cli

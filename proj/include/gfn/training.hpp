#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gfn/evaluation.hpp"
#include "gfn/policy.hpp"

namespace gfn::train {

enum class DpDiagnostics { kNone, kFinal, kEveryEval };

struct TrainConfig {
  policy::ExplorationStrategy strategy;
  policy::PolicyConfig policy;
  double bootstrap_p = 0.5;  // Bernoulli rate gating (trajectory, member) pairs
  int batch_size = 64;
  long total_trajectories = 0;
  double model_lr = 1e-3;
  double logz_lr = 1e-1;
  nn::AdamConfig adam;
  double grad_clip = 0.0;  // global-norm threshold; 0 disables
  uint64_t seed = 0;
  long eval_cadence = 32;  // steps between metric evaluations
  size_t window = 50000;   // terminal-state window W
  int delta_mode = 0;      // Hamming discovery radius; 0 -> ceil(n/10)
  int threads = 0;         // 0 -> hardware concurrency
  long checkpoint_every = 0;  // steps; 0 -> final checkpoint only
  DpDiagnostics dp = DpDiagnostics::kFinal;

  void validate() const;
};

// Per-(trajectory, member) inclusion matrix, row-major B x K.
struct BootstrapMask {
  int B = 0, K = 0;
  std::vector<uint8_t> m;
  uint8_t at(int b, int k) const { return m[static_cast<size_t>(b) * K + k]; }
  std::span<const uint8_t> row(int b) const {
    return {m.data() + static_cast<size_t>(b) * K, static_cast<size_t>(K)};
  }
};

BootstrapMask sample_bootstrap_mask(int B, int K, double p, RngStream& rng);

// Squared log-ratio of the forward flow to the reward-weighted backward flow
// on one complete trajectory, for ensemble member k. Zero iff the balance
// holds exactly on that trajectory.
double tb_loss(const env::Trajectory& t, const policy::EnsemblePolicy& pol, int k);

// sum_b sum_k mask[b,k] * tb_loss(traj_b, k) / B.
double batch_loss(std::span<const env::Trajectory> batch, const BootstrapMask& mask,
                  const policy::EnsemblePolicy& pol);

// Builds the differentiable per-trajectory loss sum_k mask[k] * tb_loss(t, k)
// on `tape`; returns -1 when no member is active. The trunk forward pass is
// shared across active members at each state.
int build_trajectory_loss(nn::Tape& tape, const policy::EnsemblePolicy& pol,
                          const env::Trajectory& t, std::span<const uint8_t> member_mask,
                          policy::PolicyScratch& ws);

struct StepMetrics {
  uint64_t step = 0;
  long trajectories_seen = 0;
  double loss = 0.0;
  double mean_reward = 0.0;
  double len_mean = 0.0;
  int len_min = 0, len_max = 0;
  double wall_ms = 0.0;
  // Phase breakdown (not part of the CSV schema).
  double rollout_ms = 0.0, backward_ms = 0.0, reduce_ms = 0.0, optim_ms = 0.0;
};

// One rollout-update cycle owner: policy, optimizer, sample window, mode
// ledger, and the deterministic stream bookkeeping. Rollouts and per-
// trajectory backward passes run on worker threads against the parameter
// snapshot. Gradients accumulate into a fixed number of index-chunked
// buffers (each chunk is filled serially in trajectory order by exactly one
// worker) and are reduced in chunk order, so results do not depend on the
// thread count.
class Trainer {
 public:
  Trainer(const env::Env& e, TrainConfig cfg);

  StepMetrics step();

  const env::Env& environment() const { return *env_; }
  policy::EnsemblePolicy& policy() { return *policy_; }
  const policy::EnsemblePolicy& policy() const { return *policy_; }
  const TrainConfig& config() const { return cfg_; }
  uint64_t step_count() const { return step_; }
  long trajectories_seen() const { return traj_seen_; }
  const eval::SampleWindow& window() const { return window_; }
  const eval::ModeLedger* ledger() const { return ledger_ ? &*ledger_ : nullptr; }
  // Trajectories generated by the most recent step(), in batch order.
  const std::vector<env::Trajectory>& last_batch() const { return batch_; }
  const eval::DistributionTable& target();  // exact R/Z table (enumerable envs)

  // Windowed L1 to the target on the grid; modes discovered on sequences.
  double eval_metric();

  void save_checkpoint(const std::string& path) const;
  void restore_checkpoint(const std::string& path);

 private:
  void rollout_batch();
  void backward_batch();

  const env::Env* env_;
  TrainConfig cfg_;
  int workers_ = 1;
  int chunks_ = 1;  // gradient-buffer count; fixed by batch size alone
  std::unique_ptr<policy::EnsemblePolicy> policy_;
  std::unique_ptr<nn::Adam> adam_;
  nn::GradBuffer main_grads_;
  std::vector<nn::GradBuffer> chunk_grads_;
  std::vector<nn::Tape> tapes_;
  std::vector<policy::PolicyScratch> scratch_;
  std::vector<env::Trajectory> batch_;
  std::vector<double> losses_;
  BootstrapMask mask_;
  eval::SampleWindow window_;
  std::optional<eval::ModeLedger> ledger_;
  std::optional<eval::DistributionTable> target_;
  uint64_t step_ = 0;
  long traj_seen_ = 0;
};

struct RunPaths {
  std::string metrics_csv;
  std::string checkpoint;
  std::string dp_csv;  // empty disables the exact-DP diagnostic file
};

struct RunSummary {
  uint64_t steps = 0;
  long trajectories = 0;
  double final_loss = 0.0;
  double final_metric = 0.0;
  double wall_ms = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

// Drives Trainer for total_trajectories / batch_size steps, appending one
// metrics row per step (flushed as written) and evaluating at the configured
// cadence. Aborts on non-finite losses with partial artifacts intact.
RunSummary run_training(Trainer& trainer, const RunPaths& paths, bool resume = false);

}  // namespace gfn::train

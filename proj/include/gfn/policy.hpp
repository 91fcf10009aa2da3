#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gfn/environments.hpp"
#include "gfn/nn.hpp"

namespace gfn::policy {

// Behavior policy used to draw training trajectories. Exploration noise
// shapes sampling only; loss terms always evaluate the unmodified forward
// policy.
struct ExplorationStrategy {
  enum class Kind { kOnPolicy, kTempering, kEpsNoisy, kThompson };
  Kind kind = Kind::kOnPolicy;
  double temperature = 1.0;  // tempering: logits / T
  double epsilon = 0.0;      // eps-noisy mixing rate

  static ExplorationStrategy on_policy() { return {}; }
  static ExplorationStrategy tempering(double t);
  static ExplorationStrategy eps_noisy(double eps);
  static ExplorationStrategy thompson() { return {Kind::kThompson, 1.0, 0.0}; }
  std::string name() const;
};

struct PolicyConfig {
  int K = 1;
  double prior_weight = 0.0;
  std::vector<size_t> hidden = {256, 256};
  // Prior trunk dims; empty means half the trunk width at the same depth.
  std::vector<size_t> prior_hidden;
  bool separate_pb = false;  // per-member backward heads (ablation)
  double leaky_slope = 0.01;
};

// Per-thread scratch buffers for the inference paths.
struct PolicyScratch {
  std::vector<double> enc, logits, prior_logits, prior_feat, probs, tmp;
  std::vector<uint8_t> mask, pb_mask;
  nn::Mlp::Scratch mlp, prior_mlp;
};

// k ~ Uniform{0..K-1}. K = 1 short-circuits without consuming a draw, so a
// single-member run leaves every other stream untouched.
int select_member(int K, RngStream& rng);

// Forward-policy ensemble: one trunk, a K*l head matrix, a frozen prior
// network of the same form whose scaled logits are added on, one shared
// backward policy, and per-member log-partition estimates. Read-only during
// rollouts; updates happen in a single writer phase.
class EnsemblePolicy {
 public:
  EnsemblePolicy(const env::Env& e, PolicyConfig cfg, uint64_t seed);

  int ensemble_size() const { return cfg_.K; }
  int num_actions() const { return num_actions_; }
  const PolicyConfig& config() const { return cfg_; }
  const env::Env& environment() const { return *env_; }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const nn::ParamStore& prior_params() const { return prior_params_; }
  // Checkpoint restore only; nothing in training writes through this.
  nn::ParamStore& prior_params_mutable() { return prior_params_; }
  uint64_t prior_checksum() const { return prior_params_.checksum(); }

  int logz_id() const { return logz_id_; }
  double logz(int k) const;

  bool has_backward_net() const { return has_pb_; }

  // Trainable head slice plus prior_weight * frozen prior slice for member k.
  // Valid-action masking happens downstream.
  void forward_logits(const env::EnvState& s, int k, std::span<double> out,
                      PolicyScratch& ws) const;

  // Probability vector over the l actions under the given strategy; zeros
  // exactly on invalid actions.
  void action_distribution(const env::EnvState& s, int k, const ExplorationStrategy& strategy,
                           std::span<double> probs, PolicyScratch& ws) const;

  env::Trajectory rollout(int k, const ExplorationStrategy& strategy, RngStream& rng,
                          PolicyScratch& ws) const;

  // Sum of log P_F(s_{t+1}|s_t) of the taken actions under member k, always
  // with the on-policy distribution. Throws when a taken action has zero
  // probability (mask inconsistency).
  double forward_logprob(const env::Trajectory& t, int k, PolicyScratch& ws) const;

  // Sum of log P_B(s_t|s_{t+1}); exactly zero for tree environments. k picks
  // the member head only in separate-P_B mode.
  double backward_logprob(const env::Trajectory& t, int k, PolicyScratch& ws) const;

  // ---- tape builders for the training pass ----
  // Hidden-stack output for state s; shared across members at this state.
  int trunk_feature_node(nn::Tape& tape, const env::EnvState& s, PolicyScratch& ws) const;
  // Frozen prior logits for every member at state s (K*l values). The prior
  // never trains, so on grids the table is precomputed once per state at
  // construction; otherwise the pass runs on the fly into ws.prior_logits.
  std::span<const double> prior_all_logits(const env::EnvState& s, PolicyScratch& ws) const;
  // log P_{F,k}(action | s) as one fused node on top of the trunk features.
  // prior_all comes from prior_all_logits at the same state (empty when
  // prior_weight is zero).
  int member_logprob_node(nn::Tape& tape, int trunk_node, std::span<const double> prior_all,
                          int k, std::span<const uint8_t> mask, int action) const;
  // Backward-policy hidden stack for a non-terminal, non-initial child state,
  // and the fused parent pick on top of it (k selects the member head only in
  // separate-P_B mode).
  int pb_trunk_node(nn::Tape& tape, const env::EnvState& child, PolicyScratch& ws) const;
  int pb_logprob_node(nn::Tape& tape, int pb_trunk, int k, std::span<const uint8_t> mask,
                      int action) const;

  const nn::Mlp& pf_net() const { return pf_; }
  const nn::Mlp& prior_net() const { return prior_; }
  const nn::Mlp& pb_net() const;

 private:
  int pb_row0(int k) const;
  void prior_features(const env::EnvState& s, PolicyScratch& ws) const;

  const env::Env* env_;
  PolicyConfig cfg_;
  int num_actions_ = 0;
  int pb_actions_ = 0;
  bool has_pb_ = false;
  nn::ParamStore params_, prior_params_;
  nn::Mlp pf_, prior_;
  std::optional<nn::Mlp> pb_;
  int logz_id_ = -1;
  // Read-only after construction; keyed by state_key.
  std::unordered_map<std::string, std::vector<double>> prior_cache_;
};

}  // namespace gfn::policy

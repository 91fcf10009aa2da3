#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "gfn/rng.hpp"

namespace gfn::env {

struct EnvSpec {
  int max_actions = 0;         // maximum out-degree over all states
  int state_encoding_dim = 0;  // length of the policy input vector
  bool enumerable = false;     // all terminal states can be listed
};

// Grid state. A terminal state is a distinct copy of the interior state it
// was terminated from ("exit at (x1,x2)" is itself a state).
struct GridState {
  int x1 = 0, x2 = 0;
  bool terminal = false;
  bool operator==(const GridState&) const = default;
};

// Bit-string prefix; complete (terminal) when it reaches the configured
// length. Every non-empty prefix has exactly one parent, so the state graph
// is a tree.
struct SeqState {
  std::vector<uint8_t> bits;
  bool operator==(const SeqState&) const = default;
};

using EnvState = std::variant<GridState, SeqState>;

struct FourierRewardParams {
  int n_terms = 0;
  std::vector<double> a1, a2, b1, b2;  // per-term frequencies, index k-1
  double c = -0.5, d = 0.5;            // image of the grid edges under g
  int H = 0;
  double beta = 1.5;
  double floor = 1e-8;  // clamp on the raw series before exponentiation

  // Frequencies 4k/n_terms for k = 1..n_terms (all four banks equal).
  static FourierRewardParams defaults(int H, int n_terms = 1000);
  void validate() const;
};

struct ModeRewardParams {
  int n = 0;
  std::vector<std::string> modes;  // distinct bit strings of length n
  void validate() const;
};

struct Trajectory {
  std::vector<std::pair<EnvState, int>> steps;  // (state, action taken from it)
  EnvState terminal_state;
  double reward = 0.0;
  int member = -1;  // generating ensemble member; -1 for baseline strategies
};

// ---- per-environment operations -------------------------------------------

// Grid actions: 0 = increment x1, 1 = increment x2, 2 = terminate. The
// indexing is fixed so ensemble head slices are deterministic.
std::vector<std::pair<int, GridState>> grid_children(const GridState& s, int H);
std::vector<std::pair<int, GridState>> grid_parents(const GridState& s);
double coordinate_map_g(int x, const FourierRewardParams& p);
double fourier_reward(const GridState& s, const FourierRewardParams& p);

std::vector<std::pair<int, SeqState>> seq_children(const SeqState& s, int n);
double hamming_reward(const std::string& x, const ModeRewardParams& p);

// num_modes distinct uniform bit strings, deterministic per seed.
ModeRewardParams sample_mode_set(int num_modes, int n, uint64_t seed);

void encode_grid_state(const GridState& s, int H, std::span<double> out);
void encode_seq_state(const SeqState& s, int n, std::span<double> out);

// ---- DAG environment interface --------------------------------------------

class Env {
 public:
  virtual ~Env() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual EnvState initial() const = 0;
  virtual bool is_terminal(const EnvState& s) const = 0;

  // Hot-path forms used by rollouts: no allocation.
  virtual void action_mask(const EnvState& s, std::span<uint8_t> mask) const = 0;
  virtual EnvState apply(const EnvState& s, int action) const = 0;
  virtual void encode(const EnvState& s, std::span<double> out) const = 0;

  virtual std::vector<std::pair<int, EnvState>> children(const EnvState& s) const = 0;
  virtual std::vector<std::pair<int, EnvState>> parents(const EnvState& s) const = 0;
  virtual double reward(const EnvState& terminal) const = 0;

  // Stable key for distribution tables; distinguishes interior from terminal.
  virtual std::string state_key(const EnvState& s) const = 0;

  // Enumeration; throws std::domain_error when !spec().enumerable.
  virtual std::vector<EnvState> terminal_states() const = 0;
  virtual std::vector<EnvState> topological_nonterminals() const = 0;

  // Backward-policy structure: number of parent-selecting actions, 0 for
  // tree-shaped graphs where the backward policy is deterministic.
  virtual int backward_actions() const = 0;
  virtual void backward_mask(const EnvState& child, std::span<uint8_t> mask) const = 0;
};

class GridEnv : public Env {
 public:
  explicit GridEnv(FourierRewardParams params);

  const EnvSpec& spec() const override { return spec_; }
  EnvState initial() const override { return GridState{0, 0, false}; }
  bool is_terminal(const EnvState& s) const override;
  void action_mask(const EnvState& s, std::span<uint8_t> mask) const override;
  EnvState apply(const EnvState& s, int action) const override;
  void encode(const EnvState& s, std::span<double> out) const override;
  std::vector<std::pair<int, EnvState>> children(const EnvState& s) const override;
  std::vector<std::pair<int, EnvState>> parents(const EnvState& s) const override;
  double reward(const EnvState& terminal) const override;
  std::string state_key(const EnvState& s) const override;
  std::vector<EnvState> terminal_states() const override;
  std::vector<EnvState> topological_nonterminals() const override;
  int backward_actions() const override { return 2; }
  void backward_mask(const EnvState& child, std::span<uint8_t> mask) const override;

  int side() const { return params_.H; }
  const FourierRewardParams& reward_params() const { return params_; }

 private:
  FourierRewardParams params_;
  EnvSpec spec_;
  std::vector<double> f1_, f2_;  // per-coordinate series values; reward is f1[x1]+f2[x2]
};

class SeqEnv : public Env {
 public:
  // delta_mode is carried here so evaluation and config share one source.
  explicit SeqEnv(ModeRewardParams params);

  const EnvSpec& spec() const override { return spec_; }
  EnvState initial() const override { return SeqState{}; }
  bool is_terminal(const EnvState& s) const override;
  void action_mask(const EnvState& s, std::span<uint8_t> mask) const override;
  EnvState apply(const EnvState& s, int action) const override;
  void encode(const EnvState& s, std::span<double> out) const override;
  std::vector<std::pair<int, EnvState>> children(const EnvState& s) const override;
  std::vector<std::pair<int, EnvState>> parents(const EnvState& s) const override;
  double reward(const EnvState& terminal) const override;
  std::string state_key(const EnvState& s) const override;
  std::vector<EnvState> terminal_states() const override;
  std::vector<EnvState> topological_nonterminals() const override;
  int backward_actions() const override { return 0; }
  void backward_mask(const EnvState&, std::span<uint8_t>) const override;

  int length() const { return params_.n; }
  const ModeRewardParams& reward_params() const { return params_; }

 private:
  ModeRewardParams params_;
  EnvSpec spec_;
  std::vector<std::vector<uint64_t>> packed_modes_;  // 64-bit packed for fast Hamming
};

// Newline-delimited bit strings.
void write_mode_set(const std::string& path, const ModeRewardParams& p);
ModeRewardParams read_mode_set(const std::string& path);

}  // namespace gfn::env

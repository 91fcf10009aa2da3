#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gfn/environments.hpp"
#include "gfn/policy.hpp"

namespace gfn::eval {

// Probability vector over terminal-state keys. Construction normalizes and
// checks the mass; missing keys read as zero.
class DistributionTable {
 public:
  DistributionTable() = default;
  static DistributionTable from_weights(std::map<std::string, double> weights);

  double at(const std::string& key) const;
  const std::map<std::string, double>& entries() const { return p_; }
  double total_mass() const;
  size_t size() const { return p_.size(); }

 private:
  std::map<std::string, double> p_;
};

// p(x) = R(x) / sum R over all terminal states.
DistributionTable exact_target_distribution(const env::Env& e);

// Forward dynamic programming in topological order under member k's
// on-policy distribution; exact marginal over terminal states.
DistributionTable exact_policy_distribution(const policy::EnsemblePolicy& pol, int k);

// Average of the member tables: the marginal of "pick a member uniformly,
// then sample a trajectory from it".
DistributionTable mixture_policy_distribution(const policy::EnsemblePolicy& pol);

// sum_x |p(x) - q(x)| over the union support.
double l1_distance(const DistributionTable& p, const DistributionTable& q);

// Ring buffer over the last W terminal-state keys, strictly FIFO.
class SampleWindow {
 public:
  explicit SampleWindow(size_t capacity);
  void push(std::string key);
  size_t size() const { return buf_.size(); }
  size_t capacity() const { return cap_; }
  bool empty() const { return buf_.empty(); }
  const std::deque<std::string>& contents() const { return buf_; }

  std::vector<uint8_t> serialize() const;
  void restore(std::span<const uint8_t> bytes);

 private:
  size_t cap_;
  std::deque<std::string> buf_;
};

DistributionTable empirical_distribution(const SampleWindow& window);

// Tracks which modes have been discovered: a sample x discovers mode m when
// the Hamming distance d(x, m) <= delta. Flags never reset.
class ModeLedger {
 public:
  ModeLedger(const env::ModeRewardParams& params, int delta_mode);

  // Flips flags for every mode within delta of any sample; returns the count.
  int update(std::span<const std::string> samples, uint64_t step);
  int count() const;
  int delta() const { return delta_; }
  size_t mode_count() const { return modes_.size(); }
  bool discovered(size_t mode_index) const { return found_.at(mode_index) != 0; }
  uint64_t discovery_step(size_t mode_index) const { return step_.at(mode_index); }

  std::vector<uint8_t> serialize() const;
  void restore(std::span<const uint8_t> bytes);

 private:
  int n_ = 0;
  int delta_ = 0;
  std::vector<std::string> modes_;
  std::vector<uint8_t> found_;
  std::vector<uint64_t> step_;
};

// (state, probability) rows, keys sorted; for external plotting.
void write_distribution_csv(const std::string& path, const DistributionTable& table);

}  // namespace gfn::eval

#include "gfn/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "gfn/nn.hpp"

namespace gfn::eval {

namespace {
constexpr double kMassTolerance = 1e-12;
}

// ---- DistributionTable -------------------------------------------------------

DistributionTable DistributionTable::from_weights(std::map<std::string, double> weights) {
  if (weights.empty()) throw std::invalid_argument("DistributionTable: empty support");
  double total = 0.0;
  for (const auto& [key, w] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw std::invalid_argument("DistributionTable: negative or non-finite weight at " + key);
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("DistributionTable: zero total mass");
  DistributionTable t;
  for (auto& [key, w] : weights) t.p_.emplace(key, w / total);
  double mass = 0.0;
  for (const auto& [key, p] : t.p_) mass += p;
  if (std::abs(mass - 1.0) > kMassTolerance)
    throw std::runtime_error("DistributionTable: normalization drift");
  return t;
}

double DistributionTable::at(const std::string& key) const {
  auto it = p_.find(key);
  return it == p_.end() ? 0.0 : it->second;
}

double DistributionTable::total_mass() const {
  double mass = 0.0;
  for (const auto& [key, p] : p_) mass += p;
  return mass;
}

// ---- exact computations ---------------------------------------------------------

DistributionTable exact_target_distribution(const env::Env& e) {
  if (!e.spec().enumerable)
    throw std::domain_error("exact_target_distribution: environment not enumerable");
  std::map<std::string, double> weights;
  for (const auto& x : e.terminal_states()) weights[e.state_key(x)] = e.reward(x);
  return DistributionTable::from_weights(std::move(weights));
}

DistributionTable exact_policy_distribution(const policy::EnsemblePolicy& pol, int k) {
  const env::Env& e = pol.environment();
  if (!e.spec().enumerable)
    throw std::domain_error("exact_policy_distribution: environment not enumerable");
  policy::PolicyScratch ws;
  const size_t l = static_cast<size_t>(e.spec().max_actions);
  std::vector<double> probs(l);
  std::vector<uint8_t> mask(l);
  std::map<std::string, double> mass;
  std::map<std::string, double> terminal_mass;
  mass[e.state_key(e.initial())] = 1.0;
  const auto on_policy = policy::ExplorationStrategy::on_policy();
  for (const auto& s : e.topological_nonterminals()) {
    const auto it = mass.find(e.state_key(s));
    if (it == mass.end() || it->second == 0.0) continue;
    const double m = it->second;
    pol.action_distribution(s, k, on_policy, probs, ws);
    e.action_mask(s, mask);
    for (size_t a = 0; a < l; ++a) {
      if (!mask[a] || probs[a] == 0.0) continue;
      const env::EnvState child = e.apply(s, static_cast<int>(a));
      const double add = m * probs[a];
      if (e.is_terminal(child))
        terminal_mass[e.state_key(child)] += add;
      else
        mass[e.state_key(child)] += add;
    }
  }
  return DistributionTable::from_weights(std::move(terminal_mass));
}

DistributionTable mixture_policy_distribution(const policy::EnsemblePolicy& pol) {
  std::map<std::string, double> acc;
  const int K = pol.ensemble_size();
  for (int k = 0; k < K; ++k) {
    const DistributionTable t = exact_policy_distribution(pol, k);
    for (const auto& [key, p] : t.entries()) acc[key] += p / static_cast<double>(K);
  }
  return DistributionTable::from_weights(std::move(acc));
}

double l1_distance(const DistributionTable& p, const DistributionTable& q) {
  // Merge over the union in key order so the sum is exactly symmetric in
  // (p, q); missing keys read as zero.
  auto ip = p.entries().begin();
  auto iq = q.entries().begin();
  double d = 0.0;
  while (ip != p.entries().end() || iq != q.entries().end()) {
    if (iq == q.entries().end() || (ip != p.entries().end() && ip->first < iq->first)) {
      d += std::abs(ip->second);
      ++ip;
    } else if (ip == p.entries().end() || iq->first < ip->first) {
      d += std::abs(iq->second);
      ++iq;
    } else {
      d += std::abs(ip->second - iq->second);
      ++ip;
      ++iq;
    }
  }
  return d;
}

// ---- SampleWindow ---------------------------------------------------------------

SampleWindow::SampleWindow(size_t capacity) : cap_(capacity) {
  if (capacity == 0) throw std::invalid_argument("SampleWindow: capacity must be >= 1");
}

void SampleWindow::push(std::string key) {
  buf_.push_back(std::move(key));
  if (buf_.size() > cap_) buf_.pop_front();
}

std::vector<uint8_t> SampleWindow::serialize() const {
  std::vector<uint8_t> out;
  nn::put_u64(out, cap_);
  nn::put_u64(out, buf_.size());
  for (const auto& key : buf_) nn::put_string(out, key);
  return out;
}

void SampleWindow::restore(std::span<const uint8_t> bytes) {
  nn::ByteReader r(bytes);
  cap_ = r.u64();
  const uint64_t n = r.u64();
  buf_.clear();
  for (uint64_t i = 0; i < n; ++i) buf_.push_back(r.str());
}

DistributionTable empirical_distribution(const SampleWindow& window) {
  if (window.empty()) throw std::invalid_argument("empirical_distribution: empty window");
  std::map<std::string, double> counts;
  for (const auto& key : window.contents()) counts[key] += 1.0;
  return DistributionTable::from_weights(std::move(counts));
}

// ---- ModeLedger -----------------------------------------------------------------

ModeLedger::ModeLedger(const env::ModeRewardParams& params, int delta_mode)
    : n_(params.n), delta_(delta_mode), modes_(params.modes) {
  params.validate();
  if (delta_ < 0) throw std::invalid_argument("ModeLedger: delta must be >= 0");
  found_.assign(modes_.size(), 0);
  step_.assign(modes_.size(), 0);
}

int ModeLedger::update(std::span<const std::string> samples, uint64_t step) {
  for (const auto& x : samples) {
    if (static_cast<int>(x.size()) != n_)
      throw std::invalid_argument("ModeLedger: sample length mismatch");
    for (size_t j = 0; j < modes_.size(); ++j) {
      if (found_[j]) continue;
      int d = 0;
      const std::string& m = modes_[j];
      for (int i = 0; i < n_ && d <= delta_; ++i) d += x[static_cast<size_t>(i)] != m[static_cast<size_t>(i)];
      if (d <= delta_) {
        found_[j] = 1;
        step_[j] = step;
      }
    }
  }
  return count();
}

int ModeLedger::count() const {
  int c = 0;
  for (uint8_t f : found_) c += f != 0;
  return c;
}

std::vector<uint8_t> ModeLedger::serialize() const {
  std::vector<uint8_t> out;
  nn::put_u32(out, static_cast<uint32_t>(n_));
  nn::put_u32(out, static_cast<uint32_t>(delta_));
  nn::put_u32(out, static_cast<uint32_t>(modes_.size()));
  for (size_t j = 0; j < modes_.size(); ++j) {
    nn::put_string(out, modes_[j]);
    out.push_back(found_[j]);
    nn::put_u64(out, step_[j]);
  }
  return out;
}

void ModeLedger::restore(std::span<const uint8_t> bytes) {
  nn::ByteReader r(bytes);
  const int n = static_cast<int>(r.u32());
  const int delta = static_cast<int>(r.u32());
  const uint32_t count = r.u32();
  if (n != n_ || delta != delta_ || count != modes_.size())
    throw std::runtime_error("ModeLedger::restore: configuration mismatch");
  for (size_t j = 0; j < modes_.size(); ++j) {
    const std::string m = r.str();
    if (m != modes_[j]) throw std::runtime_error("ModeLedger::restore: mode set mismatch");
    uint8_t f[1];
    r.raw(f);
    found_[j] = f[0];
    step_[j] = r.u64();
  }
}

void write_distribution_csv(const std::string& path, const DistributionTable& table) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "state,probability\n";
  char buf[64];
  for (const auto& [key, p] : table.entries()) {
    std::snprintf(buf, sizeof(buf), "%.17g", p);
    f << key << "," << buf << "\n";
  }
}

}  // namespace gfn::eval

#include "gfn/environments.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

namespace gfn::env {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Enumeration guard for sequence environments; beyond this the table sizes
// stop being desk-friendly.
constexpr int kMaxEnumerableSeqLen = 24;

const GridState& as_grid(const EnvState& s) { return std::get<GridState>(s); }
const SeqState& as_seq(const EnvState& s) { return std::get<SeqState>(s); }
}  // namespace

// ---- reward parameter sets ---------------------------------------------------

FourierRewardParams FourierRewardParams::defaults(int H, int n_terms) {
  FourierRewardParams p;
  p.H = H;
  p.n_terms = n_terms;
  p.a1.resize(n_terms);
  for (int k = 1; k <= n_terms; ++k) p.a1[k - 1] = 4.0 * k / n_terms;
  p.a2 = p.a1;
  p.b1 = p.a1;
  p.b2 = p.a1;
  p.validate();
  return p;
}

void FourierRewardParams::validate() const {
  if (n_terms < 1) throw std::invalid_argument("fourier: n_terms must be >= 1");
  if (!(c < d)) throw std::invalid_argument("fourier: require c < d");
  if (!(beta > 0.0)) throw std::invalid_argument("fourier: beta must be > 0");
  if (!(floor > 0.0)) throw std::invalid_argument("fourier: floor must be > 0");
  if (H < 1) throw std::invalid_argument("fourier: H must be >= 1");
  const size_t n = static_cast<size_t>(n_terms);
  if (a1.size() != n || a2.size() != n || b1.size() != n || b2.size() != n)
    throw std::invalid_argument("fourier: coefficient banks must have n_terms entries");
}

void ModeRewardParams::validate() const {
  if (n < 1) throw std::invalid_argument("modes: n must be >= 1");
  if (modes.empty()) throw std::invalid_argument("modes: need at least one mode");
  std::set<std::string> distinct;
  for (const auto& m : modes) {
    if (static_cast<int>(m.size()) != n)
      throw std::invalid_argument("modes: mode length mismatch");
    for (char ch : m)
      if (ch != '0' && ch != '1') throw std::invalid_argument("modes: non-bit character");
    if (!distinct.insert(m).second) throw std::invalid_argument("modes: duplicate mode");
  }
}

// ---- grid operations -----------------------------------------------------------

std::vector<std::pair<int, GridState>> grid_children(const GridState& s, int H) {
  if (s.terminal) throw std::invalid_argument("grid_children: called on terminal state");
  std::vector<std::pair<int, GridState>> out;
  if (s.x1 + 1 <= H - 1) out.emplace_back(0, GridState{s.x1 + 1, s.x2, false});
  if (s.x2 + 1 <= H - 1) out.emplace_back(1, GridState{s.x1, s.x2 + 1, false});
  out.emplace_back(2, GridState{s.x1, s.x2, true});
  return out;
}

std::vector<std::pair<int, GridState>> grid_parents(const GridState& s) {
  if (s.terminal) return {{2, GridState{s.x1, s.x2, false}}};
  if (s.x1 == 0 && s.x2 == 0) throw std::invalid_argument("grid_parents: called on s0");
  std::vector<std::pair<int, GridState>> out;
  if (s.x1 > 0) out.emplace_back(0, GridState{s.x1 - 1, s.x2, false});
  if (s.x2 > 0) out.emplace_back(1, GridState{s.x1, s.x2 - 1, false});
  return out;
}

double coordinate_map_g(int x, const FourierRewardParams& p) {
  return static_cast<double>(x) * (p.d - p.c) / static_cast<double>(p.H) + p.c;
}

double fourier_reward(const GridState& s, const FourierRewardParams& p) {
  if (!s.terminal) throw std::invalid_argument("fourier_reward: state not terminal");
  const double g1 = coordinate_map_g(s.x1, p);
  const double g2 = coordinate_map_g(s.x2, p);
  double raw = 0.0;
  for (int k = 0; k < p.n_terms; ++k) {
    raw += std::cos(kTwoPi * p.a1[k] * g1) + std::sin(kTwoPi * p.a2[k] * g1) +
           std::cos(kTwoPi * p.b1[k] * g2) + std::sin(kTwoPi * p.b2[k] * g2);
  }
  return std::pow(std::max(raw, p.floor), p.beta);
}

// ---- sequence operations ----------------------------------------------------------

std::vector<std::pair<int, SeqState>> seq_children(const SeqState& s, int n) {
  if (static_cast<int>(s.bits.size()) >= n)
    throw std::invalid_argument("seq_children: called on complete sequence");
  std::vector<std::pair<int, SeqState>> out;
  for (uint8_t bit : {uint8_t{0}, uint8_t{1}}) {
    SeqState child = s;
    child.bits.push_back(bit);
    out.emplace_back(static_cast<int>(bit), std::move(child));
  }
  return out;
}

double hamming_reward(const std::string& x, const ModeRewardParams& p) {
  if (static_cast<int>(x.size()) != p.n)
    throw std::invalid_argument("hamming_reward: length mismatch");
  int best = p.n;
  for (const auto& m : p.modes) {
    int d = 0;
    for (int i = 0; i < p.n; ++i) d += x[i] != m[i];
    best = std::min(best, d);
  }
  return std::exp(1.0 - static_cast<double>(best) / static_cast<double>(p.n));
}

ModeRewardParams sample_mode_set(int num_modes, int n, uint64_t seed) {
  if (num_modes < 1) throw std::invalid_argument("sample_mode_set: num_modes must be >= 1");
  if (n < 1) throw std::invalid_argument("sample_mode_set: n must be >= 1");
  if (n < 63 && static_cast<uint64_t>(num_modes) > (uint64_t{1} << n))
    throw std::invalid_argument("sample_mode_set: num_modes exceeds 2^n");
  RngStream rng(seed, StreamPurpose::kModeSet);
  std::set<std::string> seen;
  ModeRewardParams p;
  p.n = n;
  while (static_cast<int>(p.modes.size()) < num_modes) {
    std::string m(static_cast<size_t>(n), '0');
    for (int i = 0; i < n; ++i) m[i] = rng.bernoulli(0.5) ? '1' : '0';
    if (seen.insert(m).second) p.modes.push_back(std::move(m));
  }
  p.validate();
  return p;
}

// ---- encodings -----------------------------------------------------------------

void encode_grid_state(const GridState& s, int H, std::span<double> out) {
  if (out.size() != static_cast<size_t>(2 * H))
    throw std::invalid_argument("encode_grid_state: bad output size");
  std::fill(out.begin(), out.end(), 0.0);
  out[static_cast<size_t>(s.x1)] = 1.0;
  out[static_cast<size_t>(H + s.x2)] = 1.0;
}

// Per slot a 3-way one-hot with channels (zero, one, empty).
void encode_seq_state(const SeqState& s, int n, std::span<double> out) {
  if (out.size() != static_cast<size_t>(3 * n))
    throw std::invalid_argument("encode_seq_state: bad output size");
  std::fill(out.begin(), out.end(), 0.0);
  for (int i = 0; i < n; ++i) {
    const size_t base = static_cast<size_t>(3 * i);
    if (i < static_cast<int>(s.bits.size()))
      out[base + (s.bits[static_cast<size_t>(i)] ? 1 : 0)] = 1.0;
    else
      out[base + 2] = 1.0;
  }
}

// ---- GridEnv -------------------------------------------------------------------

GridEnv::GridEnv(FourierRewardParams params) : params_(std::move(params)) {
  params_.validate();
  spec_.max_actions = 3;
  spec_.state_encoding_dim = 2 * params_.H;
  spec_.enumerable = true;
  // The series is separable per coordinate; cache the two banks once.
  f1_.resize(static_cast<size_t>(params_.H));
  f2_.resize(static_cast<size_t>(params_.H));
  for (int u = 0; u < params_.H; ++u) {
    const double g = coordinate_map_g(u, params_);
    double s1 = 0.0, s2 = 0.0;
    for (int k = 0; k < params_.n_terms; ++k) {
      s1 += std::cos(kTwoPi * params_.a1[k] * g) + std::sin(kTwoPi * params_.a2[k] * g);
      s2 += std::cos(kTwoPi * params_.b1[k] * g) + std::sin(kTwoPi * params_.b2[k] * g);
    }
    f1_[static_cast<size_t>(u)] = s1;
    f2_[static_cast<size_t>(u)] = s2;
  }
}

bool GridEnv::is_terminal(const EnvState& s) const { return as_grid(s).terminal; }

void GridEnv::action_mask(const EnvState& s, std::span<uint8_t> mask) const {
  const GridState& g = as_grid(s);
  if (g.terminal) throw std::invalid_argument("action_mask: terminal state");
  mask[0] = g.x1 + 1 <= params_.H - 1;
  mask[1] = g.x2 + 1 <= params_.H - 1;
  mask[2] = 1;
}

EnvState GridEnv::apply(const EnvState& s, int action) const {
  const GridState& g = as_grid(s);
  if (g.terminal) throw std::invalid_argument("apply: terminal state");
  switch (action) {
    case 0:
      if (g.x1 + 1 > params_.H - 1) throw std::invalid_argument("apply: x1 out of grid");
      return GridState{g.x1 + 1, g.x2, false};
    case 1:
      if (g.x2 + 1 > params_.H - 1) throw std::invalid_argument("apply: x2 out of grid");
      return GridState{g.x1, g.x2 + 1, false};
    case 2:
      return GridState{g.x1, g.x2, true};
    default:
      throw std::invalid_argument("apply: unknown action");
  }
}

void GridEnv::encode(const EnvState& s, std::span<double> out) const {
  encode_grid_state(as_grid(s), params_.H, out);
}

std::vector<std::pair<int, EnvState>> GridEnv::children(const EnvState& s) const {
  std::vector<std::pair<int, EnvState>> out;
  for (auto& [a, c] : grid_children(as_grid(s), params_.H)) out.emplace_back(a, c);
  return out;
}

std::vector<std::pair<int, EnvState>> GridEnv::parents(const EnvState& s) const {
  std::vector<std::pair<int, EnvState>> out;
  for (auto& [a, p] : grid_parents(as_grid(s))) out.emplace_back(a, p);
  return out;
}

double GridEnv::reward(const EnvState& terminal) const {
  const GridState& g = as_grid(terminal);
  if (!g.terminal) throw std::invalid_argument("reward: state not terminal");
  const double raw = f1_[static_cast<size_t>(g.x1)] + f2_[static_cast<size_t>(g.x2)];
  return std::pow(std::max(raw, params_.floor), params_.beta);
}

std::string GridEnv::state_key(const EnvState& s) const {
  const GridState& g = as_grid(s);
  // Underscore separator so keys stay single CSV fields.
  const std::string coords = std::to_string(g.x1) + "_" + std::to_string(g.x2);
  return g.terminal ? coords : "n" + coords;
}

std::vector<EnvState> GridEnv::terminal_states() const {
  std::vector<EnvState> out;
  out.reserve(static_cast<size_t>(params_.H) * params_.H);
  for (int x1 = 0; x1 < params_.H; ++x1)
    for (int x2 = 0; x2 < params_.H; ++x2) out.emplace_back(GridState{x1, x2, true});
  return out;
}

std::vector<EnvState> GridEnv::topological_nonterminals() const {
  // Interiors ordered by coordinate sum; every edge increases the sum or
  // terminates, so this is a topological order.
  std::vector<EnvState> out;
  out.reserve(static_cast<size_t>(params_.H) * params_.H);
  for (int sum = 0; sum <= 2 * (params_.H - 1); ++sum)
    for (int x1 = 0; x1 < params_.H; ++x1) {
      const int x2 = sum - x1;
      if (x2 >= 0 && x2 < params_.H) out.emplace_back(GridState{x1, x2, false});
    }
  return out;
}

void GridEnv::backward_mask(const EnvState& child, std::span<uint8_t> mask) const {
  const GridState& g = as_grid(child);
  if (g.terminal) throw std::invalid_argument("backward_mask: terminal has a unique parent");
  if (g.x1 == 0 && g.x2 == 0) throw std::invalid_argument("backward_mask: s0 has no parents");
  mask[0] = g.x1 > 0;
  mask[1] = g.x2 > 0;
}

// ---- SeqEnv --------------------------------------------------------------------

SeqEnv::SeqEnv(ModeRewardParams params) : params_(std::move(params)) {
  params_.validate();
  spec_.max_actions = 2;
  spec_.state_encoding_dim = 3 * params_.n;
  spec_.enumerable = params_.n <= kMaxEnumerableSeqLen;
  const size_t words = (static_cast<size_t>(params_.n) + 63) / 64;
  for (const auto& m : params_.modes) {
    std::vector<uint64_t> packed(words, 0);
    for (int i = 0; i < params_.n; ++i)
      if (m[static_cast<size_t>(i)] == '1')
        packed[static_cast<size_t>(i) / 64] |= uint64_t{1} << (static_cast<size_t>(i) % 64);
    packed_modes_.push_back(std::move(packed));
  }
}

bool SeqEnv::is_terminal(const EnvState& s) const {
  return static_cast<int>(as_seq(s).bits.size()) == params_.n;
}

void SeqEnv::action_mask(const EnvState& s, std::span<uint8_t> mask) const {
  if (is_terminal(s)) throw std::invalid_argument("action_mask: terminal state");
  mask[0] = 1;
  mask[1] = 1;
}

EnvState SeqEnv::apply(const EnvState& s, int action) const {
  if (is_terminal(s)) throw std::invalid_argument("apply: terminal state");
  if (action != 0 && action != 1) throw std::invalid_argument("apply: unknown action");
  SeqState next = as_seq(s);
  next.bits.push_back(static_cast<uint8_t>(action));
  return next;
}

void SeqEnv::encode(const EnvState& s, std::span<double> out) const {
  encode_seq_state(as_seq(s), params_.n, out);
}

std::vector<std::pair<int, EnvState>> SeqEnv::children(const EnvState& s) const {
  std::vector<std::pair<int, EnvState>> out;
  for (auto& [a, c] : seq_children(as_seq(s), params_.n)) out.emplace_back(a, std::move(c));
  return out;
}

std::vector<std::pair<int, EnvState>> SeqEnv::parents(const EnvState& s) const {
  const SeqState& q = as_seq(s);
  if (q.bits.empty()) throw std::invalid_argument("parents: called on s0");
  SeqState parent = q;
  const int action = parent.bits.back();
  parent.bits.pop_back();
  return {{action, std::move(parent)}};
}

double SeqEnv::reward(const EnvState& terminal) const {
  const SeqState& q = as_seq(terminal);
  if (static_cast<int>(q.bits.size()) != params_.n)
    throw std::invalid_argument("reward: sequence incomplete");
  const size_t words = packed_modes_.front().size();
  std::vector<uint64_t> packed(words, 0);
  for (int i = 0; i < params_.n; ++i)
    if (q.bits[static_cast<size_t>(i)])
      packed[static_cast<size_t>(i) / 64] |= uint64_t{1} << (static_cast<size_t>(i) % 64);
  int best = params_.n;
  for (const auto& m : packed_modes_) {
    int d = 0;
    for (size_t w = 0; w < words; ++w) d += std::popcount(packed[w] ^ m[w]);
    best = std::min(best, d);
  }
  return std::exp(1.0 - static_cast<double>(best) / static_cast<double>(params_.n));
}

std::string SeqEnv::state_key(const EnvState& s) const {
  const SeqState& q = as_seq(s);
  std::string key(q.bits.size(), '0');
  for (size_t i = 0; i < q.bits.size(); ++i) key[i] = q.bits[i] ? '1' : '0';
  return key;
}

std::vector<EnvState> SeqEnv::terminal_states() const {
  if (!spec_.enumerable) throw std::domain_error("SeqEnv: not enumerable at this length");
  std::vector<EnvState> out;
  out.reserve(size_t{1} << params_.n);
  SeqState s;
  s.bits.assign(static_cast<size_t>(params_.n), 0);
  const uint64_t count = uint64_t{1} << params_.n;
  for (uint64_t v = 0; v < count; ++v) {
    for (int i = 0; i < params_.n; ++i)
      s.bits[static_cast<size_t>(i)] = static_cast<uint8_t>((v >> i) & 1);
    out.push_back(s);
  }
  return out;
}

std::vector<EnvState> SeqEnv::topological_nonterminals() const {
  if (!spec_.enumerable) throw std::domain_error("SeqEnv: not enumerable at this length");
  std::vector<EnvState> out;
  for (int len = 0; len < params_.n; ++len) {
    SeqState s;
    s.bits.assign(static_cast<size_t>(len), 0);
    const uint64_t count = uint64_t{1} << len;
    for (uint64_t v = 0; v < count; ++v) {
      for (int i = 0; i < len; ++i)
        s.bits[static_cast<size_t>(i)] = static_cast<uint8_t>((v >> i) & 1);
      out.push_back(s);
    }
  }
  return out;
}

void SeqEnv::backward_mask(const EnvState&, std::span<uint8_t>) const {
  throw std::domain_error("SeqEnv: tree-structured, backward policy is deterministic");
}

// ---- mode set files --------------------------------------------------------------

void write_mode_set(const std::string& path, const ModeRewardParams& p) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& m : p.modes) f << m << "\n";
}

ModeRewardParams read_mode_set(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  ModeRewardParams p;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    p.modes.push_back(line);
  }
  if (p.modes.empty()) throw std::runtime_error("mode set file is empty: " + path);
  p.n = static_cast<int>(p.modes.front().size());
  p.validate();
  return p;
}

}  // namespace gfn::env

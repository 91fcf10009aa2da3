#include "gfn/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace gfn::policy {

ExplorationStrategy ExplorationStrategy::tempering(double t) {
  if (!(t > 0.0)) throw std::invalid_argument("tempering: temperature must be > 0");
  return {Kind::kTempering, t, 0.0};
}

ExplorationStrategy ExplorationStrategy::eps_noisy(double eps) {
  if (eps < 0.0 || eps > 1.0) throw std::invalid_argument("eps_noisy: epsilon in [0,1]");
  return {Kind::kEpsNoisy, 1.0, eps};
}

std::string ExplorationStrategy::name() const {
  switch (kind) {
    case Kind::kOnPolicy:
      return "on_policy";
    case Kind::kTempering:
      return "tempering";
    case Kind::kEpsNoisy:
      return "eps_noisy";
    case Kind::kThompson:
      return "thompson";
  }
  return "?";
}

int select_member(int K, RngStream& rng) {
  if (K < 1) throw std::invalid_argument("select_member: K must be >= 1");
  if (K == 1) return 0;
  return static_cast<int>(rng.uniform_below(static_cast<uint64_t>(K)));
}

namespace {
std::vector<size_t> halved(const std::vector<size_t>& dims) {
  std::vector<size_t> out;
  out.reserve(dims.size());
  for (size_t d : dims) out.push_back(std::max<size_t>(1, d / 2));
  return out;
}
}  // namespace

EnsemblePolicy::EnsemblePolicy(const env::Env& e, PolicyConfig cfg, uint64_t seed)
    : env_(&e), cfg_(std::move(cfg)) {
  if (cfg_.K < 1) throw std::invalid_argument("EnsemblePolicy: K must be >= 1");
  if (cfg_.prior_weight < 0.0)
    throw std::invalid_argument("EnsemblePolicy: prior_weight must be >= 0");
  num_actions_ = e.spec().max_actions;
  pb_actions_ = e.backward_actions();
  has_pb_ = pb_actions_ > 0;
  if (cfg_.prior_hidden.empty()) cfg_.prior_hidden = halved(cfg_.hidden);

  const size_t enc = static_cast<size_t>(e.spec().state_encoding_dim);
  const size_t head = static_cast<size_t>(cfg_.K) * static_cast<size_t>(num_actions_);

  nn::MLPShape pf_shape{enc, cfg_.hidden, head, nn::Activation::kLeakyRelu, cfg_.leaky_slope};
  pf_ = nn::Mlp::build(params_, "pf", pf_shape);
  if (has_pb_) {
    const size_t pb_head = cfg_.separate_pb
                               ? static_cast<size_t>(cfg_.K) * static_cast<size_t>(pb_actions_)
                               : static_cast<size_t>(pb_actions_);
    nn::MLPShape pb_shape{enc, cfg_.hidden, pb_head, nn::Activation::kLeakyRelu,
                          cfg_.leaky_slope};
    pb_ = nn::Mlp::build(params_, "pb", pb_shape);
  }
  logz_id_ = params_.add("logz", {static_cast<size_t>(cfg_.K)}, nn::LrGroup::kLogZ);

  nn::MLPShape prior_shape{enc, cfg_.prior_hidden, head, nn::Activation::kLeakyRelu,
                           cfg_.leaky_slope};
  prior_ = nn::Mlp::build(prior_params_, "prior", prior_shape);

  RngStream main_rng(seed, StreamPurpose::kParamInit, 0);
  pf_.init_params(params_, main_rng);
  if (pb_) pb_->init_params(params_, main_rng);
  RngStream prior_rng(seed, StreamPurpose::kParamInit, 1);
  prior_.init_params(prior_params_, prior_rng);

  // The prior is frozen, so its per-state logits are a fixed table. Grids are
  // small enough to tabulate it up front; tree environments recompute on the
  // fly.
  if (cfg_.prior_weight != 0.0 && dynamic_cast<const env::GridEnv*>(env_)) {
    PolicyScratch ws;
    for (const auto& s : e.topological_nonterminals()) {
      prior_features(s, ws);
      std::vector<double> logits(head);
      prior_.head_rows(prior_params_, ws.prior_feat, 0, head, logits);
      prior_cache_.emplace(e.state_key(s), std::move(logits));
    }
  }
}

double EnsemblePolicy::logz(int k) const {
  if (k < 0 || k >= cfg_.K) throw std::invalid_argument("logz: member out of range");
  return params_.at(logz_id_).data[static_cast<size_t>(k)];
}

const nn::Mlp& EnsemblePolicy::pb_net() const {
  if (!pb_) throw std::domain_error("backward policy is deterministic for this environment");
  return *pb_;
}

int EnsemblePolicy::pb_row0(int k) const { return cfg_.separate_pb ? k * pb_actions_ : 0; }

void EnsemblePolicy::prior_features(const env::EnvState& s, PolicyScratch& ws) const {
  ws.enc.resize(static_cast<size_t>(env_->spec().state_encoding_dim));
  env_->encode(s, ws.enc);
  prior_.forward_features(prior_params_, ws.enc, ws.prior_feat, ws.prior_mlp);
}

void EnsemblePolicy::forward_logits(const env::EnvState& s, int k, std::span<double> out,
                                    PolicyScratch& ws) const {
  if (k < 0 || k >= cfg_.K) throw std::invalid_argument("forward_logits: member out of range");
  if (out.size() != static_cast<size_t>(num_actions_))
    throw std::invalid_argument("forward_logits: bad output size");
  const size_t l = static_cast<size_t>(num_actions_);
  ws.enc.resize(static_cast<size_t>(env_->spec().state_encoding_dim));
  env_->encode(s, ws.enc);
  pf_.forward_rows(params_, ws.enc, static_cast<size_t>(k) * l, l, out, ws.mlp);
  if (cfg_.prior_weight != 0.0) {
    const auto prior = prior_all_logits(s, ws).subspan(static_cast<size_t>(k) * l, l);
    for (size_t i = 0; i < out.size(); ++i) out[i] += cfg_.prior_weight * prior[i];
  }
}

void EnsemblePolicy::action_distribution(const env::EnvState& s, int k,
                                         const ExplorationStrategy& strategy,
                                         std::span<double> probs, PolicyScratch& ws) const {
  const size_t l = static_cast<size_t>(num_actions_);
  ws.logits.resize(l);
  ws.mask.resize(l);
  env_->action_mask(s, ws.mask);
  forward_logits(s, k, ws.logits, ws);
  switch (strategy.kind) {
    case ExplorationStrategy::Kind::kOnPolicy:
    case ExplorationStrategy::Kind::kThompson:
      nn::masked_softmax(ws.logits, ws.mask, probs);
      break;
    case ExplorationStrategy::Kind::kTempering: {
      for (double& x : ws.logits) x /= strategy.temperature;
      nn::masked_softmax(ws.logits, ws.mask, probs);
      break;
    }
    case ExplorationStrategy::Kind::kEpsNoisy: {
      nn::masked_softmax(ws.logits, ws.mask, probs);
      size_t valid = 0;
      for (uint8_t m : ws.mask) valid += m != 0;
      const double uniform = 1.0 / static_cast<double>(valid);
      for (size_t i = 0; i < probs.size(); ++i)
        if (ws.mask[i]) probs[i] = (1.0 - strategy.epsilon) * probs[i] + strategy.epsilon * uniform;
      break;
    }
  }
}

env::Trajectory EnsemblePolicy::rollout(int k, const ExplorationStrategy& strategy,
                                        RngStream& rng, PolicyScratch& ws) const {
  env::Trajectory t;
  env::EnvState s = env_->initial();
  ws.probs.resize(static_cast<size_t>(num_actions_));
  while (!env_->is_terminal(s)) {
    action_distribution(s, k, strategy, ws.probs, ws);
    const int a = rng.categorical(ws.probs);
    t.steps.emplace_back(s, a);
    s = env_->apply(s, a);
  }
  t.terminal_state = s;
  t.reward = env_->reward(s);
  t.member = strategy.kind == ExplorationStrategy::Kind::kThompson ? k : -1;
  return t;
}

double EnsemblePolicy::forward_logprob(const env::Trajectory& t, int k,
                                       PolicyScratch& ws) const {
  const auto on_policy = ExplorationStrategy::on_policy();
  ws.probs.resize(static_cast<size_t>(num_actions_));
  double total = 0.0;
  for (const auto& [s, a] : t.steps) {
    action_distribution(s, k, on_policy, ws.probs, ws);
    const double p = ws.probs[static_cast<size_t>(a)];
    if (p <= 0.0)
      throw std::invalid_argument("forward_logprob: taken action has zero probability");
    total += std::log(p);
  }
  return total;
}

double EnsemblePolicy::backward_logprob(const env::Trajectory& t, int k,
                                        PolicyScratch& ws) const {
  if (!has_pb_) return 0.0;  // tree: the unique parent has probability one
  const size_t lb = static_cast<size_t>(pb_actions_);
  ws.tmp.resize(lb);
  ws.pb_mask.resize(lb);
  std::vector<double> pb_probs(lb);
  double total = 0.0;
  for (size_t i = 0; i < t.steps.size(); ++i) {
    const env::EnvState& next =
        i + 1 < t.steps.size() ? t.steps[i + 1].first : t.terminal_state;
    if (env_->is_terminal(next)) continue;  // deterministic backward through terminate
    const int a = t.steps[i].second;
    if (a < 0 || a >= pb_actions_)
      throw std::invalid_argument("backward_logprob: edge action outside parent actions");
    env_->backward_mask(next, ws.pb_mask);
    ws.enc.resize(static_cast<size_t>(env_->spec().state_encoding_dim));
    env_->encode(next, ws.enc);
    pb_->forward_rows(params_, ws.enc, static_cast<size_t>(pb_row0(k)), lb, ws.tmp, ws.mlp);
    nn::masked_softmax(ws.tmp, ws.pb_mask, pb_probs);
    const double p = pb_probs[static_cast<size_t>(a)];
    if (p <= 0.0)
      throw std::invalid_argument("backward_logprob: taken edge has zero probability");
    total += std::log(p);
  }
  return total;
}

int EnsemblePolicy::trunk_feature_node(nn::Tape& tape, const env::EnvState& s,
                                       PolicyScratch& ws) const {
  ws.enc.resize(static_cast<size_t>(env_->spec().state_encoding_dim));
  env_->encode(s, ws.enc);
  int node = tape.input(ws.enc);
  for (size_t l = 0; l + 1 < pf_.layer_count(); ++l) {
    node = tape.affine(pf_.weight_id(l), pf_.bias_id(l), node);
    node = tape.leaky_relu(node, cfg_.leaky_slope);
  }
  return node;
}

std::span<const double> EnsemblePolicy::prior_all_logits(const env::EnvState& s,
                                                         PolicyScratch& ws) const {
  if (!prior_cache_.empty()) {
    auto it = prior_cache_.find(env_->state_key(s));
    if (it != prior_cache_.end()) return it->second;
  }
  prior_features(s, ws);
  const size_t total = static_cast<size_t>(cfg_.K) * static_cast<size_t>(num_actions_);
  ws.prior_logits.resize(total);
  prior_.head_rows(prior_params_, ws.prior_feat, 0, total, ws.prior_logits);
  return ws.prior_logits;
}

int EnsemblePolicy::member_logprob_node(nn::Tape& tape, int trunk_node,
                                        std::span<const double> prior_all, int k,
                                        std::span<const uint8_t> mask, int action) const {
  const size_t l = static_cast<size_t>(num_actions_);
  const size_t last = pf_.layer_count() - 1;
  const std::span<const double> slice =
      prior_all.empty() ? prior_all : prior_all.subspan(static_cast<size_t>(k) * l, l);
  return tape.member_log_prob(pf_.weight_id(last), pf_.bias_id(last),
                              static_cast<size_t>(k) * l, l, trunk_node, slice,
                              cfg_.prior_weight, mask, action);
}

int EnsemblePolicy::pb_trunk_node(nn::Tape& tape, const env::EnvState& child,
                                  PolicyScratch& ws) const {
  if (!has_pb_) throw std::domain_error("pb_trunk_node: deterministic backward policy");
  ws.enc.resize(static_cast<size_t>(env_->spec().state_encoding_dim));
  env_->encode(child, ws.enc);
  int node = tape.input(ws.enc);
  for (size_t l = 0; l + 1 < pb_->layer_count(); ++l) {
    node = tape.affine(pb_->weight_id(l), pb_->bias_id(l), node);
    node = tape.leaky_relu(node, cfg_.leaky_slope);
  }
  return node;
}

int EnsemblePolicy::pb_logprob_node(nn::Tape& tape, int pb_trunk, int k,
                                    std::span<const uint8_t> mask, int action) const {
  const size_t last = pb_->layer_count() - 1;
  return tape.member_log_prob(pb_->weight_id(last), pb_->bias_id(last),
                              static_cast<size_t>(pb_row0(k)),
                              static_cast<size_t>(pb_actions_), pb_trunk, {}, 0.0, mask,
                              action);
}

}  // namespace gfn::policy

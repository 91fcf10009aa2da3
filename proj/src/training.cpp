#include "gfn/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "gfn/parallel.hpp"

namespace gfn::train {

namespace {
double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (bootstrap_p < 0.0 || bootstrap_p > 1.0)
    throw std::invalid_argument("train: bootstrap_p in [0,1]");
  // Baselines train a single policy; only Thompson sampling owns an ensemble,
  // and the all-ones baseline mask is one member wide by contract.
  if (strategy.kind != policy::ExplorationStrategy::Kind::kThompson && policy.K != 1)
    throw std::invalid_argument("train: strategy '" + strategy.name() + "' requires K = 1");
  if (!(model_lr > 0.0) || !(logz_lr > 0.0))
    throw std::invalid_argument("train: learning rates must be > 0");
  if (total_trajectories < 0) throw std::invalid_argument("train: negative budget");
  if (eval_cadence < 1) throw std::invalid_argument("train: eval_cadence must be >= 1");
  if (window < 1) throw std::invalid_argument("train: window must be >= 1");
  if (grad_clip < 0.0) throw std::invalid_argument("train: grad_clip must be >= 0");
  if (delta_mode < 0) throw std::invalid_argument("train: delta_mode must be >= 0");
}

BootstrapMask sample_bootstrap_mask(int B, int K, double p, RngStream& rng) {
  if (B < 1 || K < 1) throw std::invalid_argument("bootstrap mask: B, K must be >= 1");
  BootstrapMask mask;
  mask.B = B;
  mask.K = K;
  mask.m.resize(static_cast<size_t>(B) * K);
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < K; ++k)
      mask.m[static_cast<size_t>(b) * K + k] = rng.bernoulli(p) ? 1 : 0;
  return mask;
}

double tb_loss(const env::Trajectory& t, const policy::EnsemblePolicy& pol, int k) {
  if (!(t.reward > 0.0)) throw std::domain_error("tb_loss: reward must be positive");
  policy::PolicyScratch ws;
  const double fwd = pol.forward_logprob(t, k, ws);
  const double bwd = pol.backward_logprob(t, k, ws);
  const double core = pol.logz(k) + fwd - std::log(t.reward) - bwd;
  if (!std::isfinite(core)) throw std::runtime_error("tb_loss: non-finite balance term");
  return core * core;
}

double batch_loss(std::span<const env::Trajectory> batch, const BootstrapMask& mask,
                  const policy::EnsemblePolicy& pol) {
  if (static_cast<int>(batch.size()) != mask.B)
    throw std::invalid_argument("batch_loss: mask rows != batch size");
  double total = 0.0;
  for (int b = 0; b < mask.B; ++b)
    for (int k = 0; k < mask.K; ++k)
      if (mask.at(b, k)) total += tb_loss(batch[static_cast<size_t>(b)], pol, k);
  return total / static_cast<double>(mask.B);
}

int build_trajectory_loss(nn::Tape& tape, const policy::EnsemblePolicy& pol,
                          const env::Trajectory& t, std::span<const uint8_t> member_mask,
                          policy::PolicyScratch& ws) {
  const int K = pol.ensemble_size();
  if (static_cast<int>(member_mask.size()) != K)
    throw std::invalid_argument("build_trajectory_loss: mask size != K");
  if (!(t.reward > 0.0)) throw std::domain_error("build_trajectory_loss: reward must be positive");
  std::vector<int> active;
  for (int k = 0; k < K; ++k)
    if (member_mask[static_cast<size_t>(k)]) active.push_back(k);
  if (active.empty()) return -1;

  const env::Env& e = pol.environment();
  const size_t l = static_cast<size_t>(e.spec().max_actions);
  const bool separate_pb = pol.config().separate_pb;
  std::vector<uint8_t> mask(l);
  std::vector<uint8_t> pb_mask(static_cast<size_t>(std::max(e.backward_actions(), 0)));

  // Per active member: log P_F picks; plus log P_B picks (negated), one
  // shared list unless each member has its own backward head.
  std::vector<std::vector<int>> pf_picks(active.size());
  std::vector<std::vector<int>> pb_picks(separate_pb ? active.size() : 1);

  const bool with_prior = pol.config().prior_weight != 0.0;
  for (const auto& [s, a] : t.steps) {
    e.action_mask(s, mask);
    const int trunk = pol.trunk_feature_node(tape, s, ws);
    const std::span<const double> prior_all =
        with_prior ? pol.prior_all_logits(s, ws) : std::span<const double>();
    for (size_t i = 0; i < active.size(); ++i)
      pf_picks[i].push_back(pol.member_logprob_node(tape, trunk, prior_all, active[i], mask, a));
  }
  if (pol.has_backward_net()) {
    for (size_t i = 0; i < t.steps.size(); ++i) {
      const env::EnvState& next =
          i + 1 < t.steps.size() ? t.steps[i + 1].first : t.terminal_state;
      if (e.is_terminal(next)) continue;
      const int a = t.steps[i].second;
      e.backward_mask(next, pb_mask);
      const int pb_trunk = pol.pb_trunk_node(tape, next, ws);
      if (separate_pb) {
        for (size_t j = 0; j < active.size(); ++j)
          pb_picks[j].push_back(pol.pb_logprob_node(tape, pb_trunk, active[j], pb_mask, a));
      } else {
        pb_picks[0].push_back(pol.pb_logprob_node(tape, pb_trunk, 0, pb_mask, a));
      }
    }
  }

  const double log_r = std::log(t.reward);
  std::vector<int> squares;
  std::vector<int> terms;
  std::vector<double> coeffs;
  for (size_t i = 0; i < active.size(); ++i) {
    terms.clear();
    coeffs.clear();
    terms.push_back(tape.param_scalar(pol.logz_id(), static_cast<size_t>(active[i])));
    coeffs.push_back(1.0);
    for (int node : pf_picks[i]) {
      terms.push_back(node);
      coeffs.push_back(1.0);
    }
    const auto& pb_list = pb_picks[separate_pb ? i : 0];
    for (int node : pb_list) {
      terms.push_back(node);
      coeffs.push_back(-1.0);
    }
    const int core = tape.scalar_combine(terms, coeffs, -log_r);
    squares.push_back(tape.square(core));
  }
  const std::vector<double> ones(squares.size(), 1.0);
  return tape.scalar_combine(squares, ones, 0.0);
}

// ---- Trainer ---------------------------------------------------------------------

Trainer::Trainer(const env::Env& e, TrainConfig cfg)
    : env_(&e), cfg_(std::move(cfg)), window_(cfg_.window > 0 ? cfg_.window : 1) {
  cfg_.validate();
  workers_ = resolve_threads(cfg_.threads, static_cast<size_t>(cfg_.batch_size));
  chunks_ = std::min(cfg_.batch_size, 8);
  policy_ = std::make_unique<policy::EnsemblePolicy>(e, cfg_.policy, cfg_.seed);
  adam_ = std::make_unique<nn::Adam>(policy_->params(), cfg_.adam);
  main_grads_ = nn::GradBuffer(policy_->params());
  for (int c = 0; c < chunks_; ++c) chunk_grads_.emplace_back(policy_->params());
  for (int w = 0; w < workers_; ++w) tapes_.emplace_back(&policy_->params());
  scratch_.resize(static_cast<size_t>(workers_));
  batch_.resize(static_cast<size_t>(cfg_.batch_size));
  losses_.assign(static_cast<size_t>(cfg_.batch_size), 0.0);
  if (const auto* se = dynamic_cast<const env::SeqEnv*>(env_)) {
    const int delta =
        cfg_.delta_mode > 0 ? cfg_.delta_mode : (se->length() + 9) / 10;  // ceil(n/10)
    cfg_.delta_mode = delta;
    ledger_.emplace(se->reward_params(), delta);
  }
}

const eval::DistributionTable& Trainer::target() {
  if (!target_) target_ = eval::exact_target_distribution(*env_);
  return *target_;
}

void Trainer::rollout_batch() {
  const bool ts = cfg_.strategy.kind == policy::ExplorationStrategy::Kind::kThompson;
  const int K = cfg_.policy.K;
  parallel_for_ranges(static_cast<size_t>(cfg_.batch_size), workers_,
                      [&](int w, size_t lo, size_t hi) {
                        for (size_t b = lo; b < hi; ++b) {
                          const uint64_t traj_index =
                              static_cast<uint64_t>(traj_seen_) + static_cast<uint64_t>(b);
                          int k = 0;
                          if (ts) {
                            RngStream ms(cfg_.seed, StreamPurpose::kMemberSelect, traj_index);
                            k = policy::select_member(K, ms);
                          }
                          RngStream rs(cfg_.seed, StreamPurpose::kAction, traj_index);
                          batch_[b] = policy_->rollout(k, cfg_.strategy, rs, scratch_[w]);
                        }
                      });
}

void Trainer::backward_batch() {
  const double inv_b = 1.0 / static_cast<double>(cfg_.batch_size);
  const size_t per_chunk =
      (static_cast<size_t>(cfg_.batch_size) + chunks_ - 1) / static_cast<size_t>(chunks_);
  // Parallelism is over chunks; each chunk's buffer sees its trajectories in
  // index order no matter which worker runs it.
  parallel_for_ranges(
      static_cast<size_t>(chunks_), workers_, [&](int w, size_t clo, size_t chi) {
        for (size_t c = clo; c < chi; ++c) {
          const size_t lo = c * per_chunk;
          const size_t hi = std::min(static_cast<size_t>(cfg_.batch_size), lo + per_chunk);
          for (size_t b = lo; b < hi; ++b) {
            nn::Tape& tape = tapes_[static_cast<size_t>(w)];
            tape.reset();
            const int loss =
                build_trajectory_loss(tape, *policy_, batch_[b],
                                      mask_.row(static_cast<int>(b)), scratch_[w]);
            if (loss < 0) {
              losses_[b] = 0.0;  // all-zero mask row: no contribution
              continue;
            }
            losses_[b] = tape.scalar_value(loss);
            tape.backward(loss, chunk_grads_[c], inv_b);
          }
        }
      });
}

StepMetrics Trainer::step() {
  const double t0 = now_ms();
  const bool ts = cfg_.strategy.kind == policy::ExplorationStrategy::Kind::kThompson;
  rollout_batch();
  const double t1 = now_ms();

  if (ts) {
    RngStream mask_rng(cfg_.seed, StreamPurpose::kBootstrap, step_);
    mask_ = sample_bootstrap_mask(cfg_.batch_size, cfg_.policy.K, cfg_.bootstrap_p, mask_rng);
  } else {
    mask_.B = cfg_.batch_size;
    mask_.K = 1;
    mask_.m.assign(static_cast<size_t>(cfg_.batch_size), 1);
  }

  backward_batch();
  const double t2 = now_ms();

  main_grads_.zero();
  for (auto& g : chunk_grads_) g.drain_into(main_grads_);  // fixed chunk order
  if (cfg_.grad_clip > 0.0) {
    const double norm = std::sqrt(main_grads_.squared_norm());
    if (norm > cfg_.grad_clip) main_grads_.scale(cfg_.grad_clip / norm);
  }
  const double t3 = now_ms();
  adam_->step(policy_->params(), main_grads_, cfg_.model_lr, cfg_.logz_lr);
  const double t4 = now_ms();

  StepMetrics m;
  m.rollout_ms = t1 - t0;
  m.backward_ms = t2 - t1;
  m.reduce_ms = t3 - t2;
  m.optim_ms = t4 - t3;
  m.step = ++step_;
  double loss_sum = 0.0, reward_sum = 0.0, len_sum = 0.0;
  m.len_min = static_cast<int>(batch_.front().steps.size());
  m.len_max = m.len_min;
  std::vector<std::string> samples;
  samples.reserve(batch_.size());
  for (const auto& t : batch_) {
    reward_sum += t.reward;
    const int len = static_cast<int>(t.steps.size());
    len_sum += len;
    m.len_min = std::min(m.len_min, len);
    m.len_max = std::max(m.len_max, len);
    samples.push_back(env_->state_key(t.terminal_state));
  }
  for (double v : losses_) loss_sum += v;
  m.loss = loss_sum / static_cast<double>(cfg_.batch_size);
  m.mean_reward = reward_sum / static_cast<double>(cfg_.batch_size);
  m.len_mean = len_sum / static_cast<double>(cfg_.batch_size);
  for (auto& key : samples) window_.push(key);
  if (ledger_) ledger_->update(samples, step_);
  traj_seen_ += cfg_.batch_size;
  m.trajectories_seen = traj_seen_;
  m.wall_ms = now_ms() - t0;
  return m;
}

double Trainer::eval_metric() {
  if (ledger_) return static_cast<double>(ledger_->count());
  if (window_.empty()) return std::numeric_limits<double>::quiet_NaN();
  return eval::l1_distance(eval::empirical_distribution(window_), target());
}

void Trainer::save_checkpoint(const std::string& path) const {
  std::vector<uint8_t> meta;
  nn::put_u32(meta, 1);
  nn::put_u64(meta, step_);
  nn::put_u64(meta, static_cast<uint64_t>(traj_seen_));
  std::vector<nn::Section> sections;
  sections.emplace_back("meta", std::move(meta));
  sections.emplace_back("params/main", nn::serialize_store(policy_->params()));
  sections.emplace_back("params/prior", nn::serialize_store(policy_->prior_params()));
  sections.emplace_back("adam", adam_->serialize());
  sections.emplace_back("window", window_.serialize());
  if (ledger_) sections.emplace_back("ledger", ledger_->serialize());
  nn::write_checkpoint(path, sections);
}

void Trainer::restore_checkpoint(const std::string& path) {
  auto sections = nn::read_checkpoint(path);
  auto find = [&](const std::string& key) -> std::vector<uint8_t>* {
    for (auto& [k, v] : sections)
      if (k == key) return &v;
    return nullptr;
  };
  auto* meta = find("meta");
  if (!meta) throw std::runtime_error("checkpoint: missing meta section");
  nn::ByteReader r(*meta);
  if (r.u32() != 1) throw std::runtime_error("checkpoint: unsupported meta format");
  step_ = r.u64();
  traj_seen_ = static_cast<long>(r.u64());
  auto* main_params = find("params/main");
  auto* prior_params = find("params/prior");
  auto* adam = find("adam");
  auto* window = find("window");
  if (!main_params || !prior_params || !adam || !window)
    throw std::runtime_error("checkpoint: missing section");
  nn::restore_store(policy_->params(), *main_params);
  // The prior is reconstructible from the seed; restoring keeps the file
  // self-contained and lets the freeze invariant be checked byte-for-byte.
  nn::restore_store(policy_->prior_params_mutable(), *prior_params);
  adam_->restore(*adam);
  window_.restore(*window);
  if (ledger_) {
    auto* ledger = find("ledger");
    if (!ledger) throw std::runtime_error("checkpoint: missing ledger section");
    ledger_->restore(*ledger);
  }
}

// ---- run_training -----------------------------------------------------------------

RunSummary run_training(Trainer& trainer, const RunPaths& paths, bool resume) {
  RunSummary summary;
  const TrainConfig& cfg = trainer.config();
  const long total_steps =
      cfg.batch_size > 0 ? cfg.total_trajectories / cfg.batch_size : 0;
  const double run_t0 = now_ms();

  std::ofstream csv;
  if (resume) {
    csv.open(paths.metrics_csv, std::ios::app);
  } else {
    csv.open(paths.metrics_csv, std::ios::trunc);
    csv << "step,trajectories_seen,loss,mean_reward,L1_or_modes,wall_ms\n";
  }
  if (!csv) throw std::runtime_error("cannot write " + paths.metrics_csv);
  csv.flush();

  std::ofstream dp_csv;
  const bool grid_dp = trainer.environment().spec().enumerable &&
                       trainer.ledger() == nullptr && !paths.dp_csv.empty() &&
                       cfg.dp != DpDiagnostics::kNone;
  if (grid_dp) {
    dp_csv.open(paths.dp_csv, resume ? std::ios::app : std::ios::trunc);
    if (!resume) dp_csv << "step,scope,member,l1_exact\n";
  }
  auto write_dp_rows = [&](uint64_t step) {
    if (!grid_dp) return;
    const auto& pol = trainer.policy();
    const auto& target = trainer.target();
    std::map<std::string, double> acc;
    const int K = pol.ensemble_size();
    for (int k = 0; k < K; ++k) {
      const auto table = eval::exact_policy_distribution(pol, k);
      dp_csv << step << ",member," << k << "," << fmt_g(eval::l1_distance(table, target))
             << "\n";
      for (const auto& [key, p] : table.entries()) acc[key] += p / static_cast<double>(K);
    }
    const auto mixture = eval::DistributionTable::from_weights(std::move(acc));
    dp_csv << step << ",mixture,-1," << fmt_g(eval::l1_distance(mixture, target)) << "\n";
    dp_csv.flush();
  };

  StepMetrics last;
  try {
    while (static_cast<long>(trainer.step_count()) < total_steps) {
      last = trainer.step();
      const bool at_cadence = last.step % static_cast<uint64_t>(cfg.eval_cadence) == 0;
      const bool at_end = static_cast<long>(last.step) == total_steps;
      std::string metric;
      if (at_cadence || at_end) {
        summary.final_metric = trainer.eval_metric();
        metric = fmt_g(summary.final_metric);
        if (cfg.dp == DpDiagnostics::kEveryEval) write_dp_rows(last.step);
      }
      csv << last.step << "," << last.trajectories_seen << "," << fmt_g(last.loss) << ","
          << fmt_g(last.mean_reward) << "," << metric << "," << fmt_g(last.wall_ms) << "\n";
      csv.flush();
      if (cfg.checkpoint_every > 0 &&
          last.step % static_cast<uint64_t>(cfg.checkpoint_every) == 0)
        trainer.save_checkpoint(paths.checkpoint);
      summary.final_loss = last.loss;
    }
    trainer.save_checkpoint(paths.checkpoint);
    if (cfg.dp == DpDiagnostics::kFinal) write_dp_rows(trainer.step_count());
  } catch (const std::exception& ex) {
    // Leave partial artifacts in place and report the abort.
    summary.aborted = true;
    summary.abort_reason = ex.what();
    try {
      trainer.save_checkpoint(paths.checkpoint);
    } catch (...) {
    }
  }
  summary.steps = trainer.step_count();
  summary.trajectories = trainer.trajectories_seen();
  summary.wall_ms = now_ms() - run_t0;
  return summary;
}

}  // namespace gfn::train

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "gfn/training.hpp"
#include "test_util.hpp"

using namespace gfn;
using namespace gfn::train;

namespace {

env::FourierRewardParams tiny_fourier(int H) {
  env::FourierRewardParams p;
  p.H = H;
  p.n_terms = 1;
  p.a1 = p.a2 = p.b1 = p.b2 = {0.0};
  return p;
}

// H=3 instance with a moderate reward range (about 18x) and six of nine
// cells on the clamp: concentrated enough to be non-trivial, spread enough
// that plain on-policy sampling keeps visiting every cell. The paper-default
// 1000-term series at this size is so peaked that on-policy training
// reliably collapses, which is the phenomenon under study, not a base case.
env::FourierRewardParams benign_fourier_h3() {
  env::FourierRewardParams p;
  p.H = 3;
  p.n_terms = 2;
  p.a1 = p.a2 = p.b1 = p.b2 = {1.0, 2.0};
  p.floor = 0.5;
  return p;
}

TrainConfig base_cfg() {
  TrainConfig cfg;
  cfg.policy.hidden = {16, 16};
  cfg.batch_size = 8;
  cfg.model_lr = 0.01;
  cfg.logz_lr = 0.1;
  cfg.seed = 5;
  cfg.window = 512;
  cfg.eval_cadence = 4;
  cfg.threads = 1;
  return cfg;
}

// Two-leaf tree with rewards (1, 3) and a directly controllable root policy:
// no hidden layers, so the logits are just a bias read through the one-hot.
struct TwoLeaf {
  testutil::TestTreeEnv env{1, {{"0", 1.0}, {"1", 3.0}}};
  TrainConfig cfg;
  std::unique_ptr<Trainer> trainer;

  explicit TwoLeaf(double logit1, double logz) {
    cfg = base_cfg();
    cfg.policy.hidden = {};
    cfg.strategy = policy::ExplorationStrategy::on_policy();
    trainer = std::make_unique<Trainer>(env, cfg);
    auto& ps = trainer->policy().params();
    for (size_t t = 0; t < ps.count(); ++t) {
      auto& tensor = ps.at(static_cast<int>(t));
      std::fill(tensor.data.begin(), tensor.data.end(), 0.0);
    }
    ps.at(trainer->policy().pf_net().final_bias_id()).data[1] = logit1;
    ps.at(trainer->policy().logz_id()).data[0] = logz;
  }

  env::Trajectory traj(int leaf) const {
    env::Trajectory t;
    t.steps = {{env.initial(), leaf}};
    t.terminal_state = env.apply(env.initial(), leaf);
    t.reward = env.reward(t.terminal_state);
    return t;
  }
};

std::vector<std::string> csv_column(const std::string& path, size_t col) {
  std::ifstream f(path);
  std::vector<std::string> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string cell;
    for (size_t i = 0; i <= col; ++i) std::getline(ss, cell, ',');
    out.push_back(cell);
  }
  return out;
}

}  // namespace

TEST_CASE("bootstrap mask: shape, reproducibility, empirical rate") {
  RngStream a(3, StreamPurpose::kBootstrap, 1), b(3, StreamPurpose::kBootstrap, 1);
  const auto m1 = sample_bootstrap_mask(16, 8, 0.274, a);
  const auto m2 = sample_bootstrap_mask(16, 8, 0.274, b);
  CHECK(m1.m == m2.m);
  RngStream c(3, StreamPurpose::kBootstrap, 2);
  const auto big = sample_bootstrap_mask(500, 40, 0.274, c);
  double rate = 0.0;
  for (uint8_t v : big.m) rate += v;
  rate /= static_cast<double>(big.m.size());
  CHECK(std::abs(rate - 0.274) < 0.01);

  RngStream d(3, StreamPurpose::kBootstrap, 3);
  const auto ones = sample_bootstrap_mask(4, 4, 1.0, d);
  for (uint8_t v : ones.m) CHECK(v == 1);
}

TEST_CASE("tb loss: constructed exact balance gives zero") {
  // P_F = (1/4, 3/4) via logits (0, log 3); Z = 4 matches R = (1, 3).
  TwoLeaf t(std::log(3.0), std::log(4.0));
  CHECK(tb_loss(t.traj(0), t.trainer->policy(), 0) < 1e-28);
  CHECK(tb_loss(t.traj(1), t.trainer->policy(), 0) < 1e-28);
}

TEST_CASE("tb loss: uniform policy on the 1:3 tree, hand value") {
  // (log 4 + log 1/2 - log 3)^2 = log(2/3)^2.
  TwoLeaf t(0.0, std::log(4.0));
  CHECK(tb_loss(t.traj(1), t.trainer->policy(), 0) ==
        doctest::Approx(0.16440195389316553).epsilon(1e-12));
}

TEST_CASE("tb loss rejects non-positive rewards") {
  testutil::TestTreeEnv env(1, {{"0", 0.0}, {"1", 1.0}});
  TrainConfig cfg = base_cfg();
  cfg.policy.hidden = {};
  Trainer trainer(env, cfg);
  env::Trajectory t;
  t.steps = {{env.initial(), 0}};
  t.terminal_state = env.apply(env.initial(), 0);
  t.reward = 0.0;
  CHECK_THROWS_AS(tb_loss(t, trainer.policy(), 0), std::domain_error);
}

TEST_CASE("zero-loss soundness: exact balance implies the reward-proportional marginal") {
  TwoLeaf t(std::log(3.0), std::log(4.0));
  const auto& pol = t.trainer->policy();
  double max_loss = 0.0;
  for (int leaf : {0, 1}) max_loss = std::max(max_loss, tb_loss(t.traj(leaf), pol, 0));
  REQUIRE(max_loss < 1e-8);
  const auto dp = eval::exact_policy_distribution(pol, 0);
  const auto target = eval::exact_target_distribution(t.env);
  CHECK(eval::l1_distance(dp, target) < 1e-3);
  CHECK(std::exp(pol.logz(0)) == doctest::Approx(4.0).epsilon(1e-3));  // sum of rewards
}

TEST_CASE("batch loss: definition, all-ones and handcrafted masks") {
  env::GridEnv grid(tiny_fourier(3));
  TrainConfig cfg = base_cfg();
  cfg.policy.K = 2;
  cfg.strategy = policy::ExplorationStrategy::thompson();
  Trainer trainer(grid, cfg);
  const auto& pol = trainer.policy();
  policy::PolicyScratch ws;
  std::vector<env::Trajectory> batch;
  for (uint64_t i = 0; i < 2; ++i) {
    RngStream rng(9, StreamPurpose::kAction, i);
    batch.push_back(pol.rollout(static_cast<int>(i % 2),
                                policy::ExplorationStrategy::thompson(), rng, ws));
  }

  BootstrapMask ones{2, 1, {1, 1}};
  const double mean_tb = (tb_loss(batch[0], pol, 0) + tb_loss(batch[1], pol, 0)) / 2.0;
  CHECK(batch_loss(std::span<const env::Trajectory>(batch.data(), 1), BootstrapMask{1, 1, {1}},
                   pol) == doctest::Approx(tb_loss(batch[0], pol, 0)).epsilon(1e-15));
  CHECK(batch_loss(batch, ones, pol) == doctest::Approx(mean_tb).epsilon(1e-15));

  BootstrapMask zeros{2, 2, {0, 0, 0, 0}};
  CHECK(batch_loss(batch, zeros, pol) == 0.0);

  BootstrapMask hand{2, 2, {1, 0, 0, 1}};
  const double expect = (tb_loss(batch[0], pol, 0) + tb_loss(batch[1], pol, 1)) / 2.0;
  CHECK(batch_loss(batch, hand, pol) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("tape-built trajectory loss agrees with the value path") {
  env::GridEnv grid(tiny_fourier(4));
  TrainConfig cfg = base_cfg();
  cfg.policy.K = 3;
  cfg.policy.prior_weight = 1.7;
  cfg.strategy = policy::ExplorationStrategy::thompson();
  Trainer trainer(grid, cfg);
  const auto& pol = trainer.policy();
  policy::PolicyScratch ws;
  nn::Tape tape(&pol.params());
  for (uint64_t i = 0; i < 20; ++i) {
    RngStream rng(13, StreamPurpose::kAction, i);
    const auto t = pol.rollout(static_cast<int>(i % 3),
                               policy::ExplorationStrategy::thompson(), rng, ws);
    RngStream mask_rng(13, StreamPurpose::kBootstrap, i);
    const auto mask = sample_bootstrap_mask(1, 3, 0.6, mask_rng);
    tape.reset();
    const int loss = build_trajectory_loss(tape, pol, t, mask.row(0), ws);
    double expect = 0.0;
    for (int k = 0; k < 3; ++k)
      if (mask.at(0, k)) expect += tb_loss(t, pol, k);
    if (loss < 0)
      CHECK(expect == 0.0);
    else
      CHECK(tape.scalar_value(loss) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("gradient flow isolation: a masked-out member is bit-unchanged") {
  env::GridEnv grid(tiny_fourier(3));
  TrainConfig cfg = base_cfg();
  cfg.policy.K = 4;
  cfg.strategy = policy::ExplorationStrategy::thompson();
  Trainer trainer(grid, cfg);
  auto& pol = trainer.policy();
  policy::PolicyScratch ws;

  nn::GradBuffer grads(pol.params());
  nn::Tape tape(&pol.params());
  for (uint64_t i = 0; i < 6; ++i) {
    RngStream rng(21, StreamPurpose::kAction, i);
    const auto t =
        pol.rollout(static_cast<int>(i % 4), policy::ExplorationStrategy::thompson(), rng, ws);
    std::vector<uint8_t> mask = {1, 1, 0, 1};  // member 2 never trains
    tape.reset();
    const int loss = build_trajectory_loss(tape, pol, t, mask, ws);
    REQUIRE(loss >= 0);
    tape.backward(loss, grads, 1.0 / 6.0);
  }
  const int head_w = pol.pf_net().final_weight_id();
  const int head_b = pol.pf_net().final_bias_id();
  const size_t feat = pol.pf_net().feature_dim();
  double trunk_grad_norm = 0.0;
  for (double g : grads[pol.pf_net().weight_id(0)]) trunk_grad_norm += g * g;
  CHECK(trunk_grad_norm > 0.0);
  for (size_t r = 2 * 3; r < 3 * 3; ++r) {
    for (size_t c = 0; c < feat; ++c) CHECK(grads[head_w][r * feat + c] == 0.0);
    CHECK(grads[head_b][r] == 0.0);
  }
  CHECK(grads[pol.logz_id()][2] == 0.0);
  CHECK(grads[pol.logz_id()][0] != 0.0);

  // With fresh moments, Adam leaves zero-gradient coordinates untouched.
  const auto head_w_before = pol.params().at(head_w).data;
  const double logz2_before = pol.logz(2);
  nn::Adam adam(pol.params(), {});
  adam.step(pol.params(), grads, 0.01, 0.1);
  for (size_t r = 2 * 3; r < 3 * 3; ++r)
    for (size_t c = 0; c < feat; ++c)
      CHECK(pol.params().at(head_w).data[r * feat + c] == head_w_before[r * feat + c]);
  CHECK(pol.logz(2) == logz2_before);
  CHECK(pol.params().at(head_w).data[0] != head_w_before[0]);
}

TEST_CASE("train_step determinism, including across thread counts") {
  auto run = [&](int threads) {
    env::GridEnv grid(tiny_fourier(4));
    TrainConfig cfg = base_cfg();
    cfg.policy.K = 3;
    cfg.policy.prior_weight = 2.0;
    cfg.strategy = policy::ExplorationStrategy::thompson();
    cfg.bootstrap_p = 0.5;
    cfg.threads = threads;
    Trainer trainer(grid, cfg);
    std::vector<double> losses;
    for (int i = 0; i < 5; ++i) losses.push_back(trainer.step().loss);
    return std::pair{losses, trainer.policy().params().checksum()};
  };
  const auto [l1, c1] = run(1);
  const auto [l2, c2] = run(1);
  const auto [l4, c4] = run(4);
  CHECK(l1 == l2);
  CHECK(c1 == c2);
  CHECK(l1 == l4);  // reduction order is trajectory-indexed, not thread-indexed
  CHECK(c1 == c4);
}

TEST_CASE("step metrics are coherent") {
  env::GridEnv grid(tiny_fourier(4));
  TrainConfig cfg = base_cfg();
  cfg.strategy = policy::ExplorationStrategy::on_policy();
  Trainer trainer(grid, cfg);
  const auto m = trainer.step();
  CHECK(m.step == 1);
  CHECK(m.trajectories_seen == cfg.batch_size);
  CHECK(m.len_min <= m.len_mean);
  CHECK(m.len_mean <= m.len_max);
  CHECK(m.len_max <= 2 * (4 - 1) + 1);
  CHECK(m.loss >= 0.0);
  CHECK(std::isfinite(m.mean_reward));
}

TEST_CASE("prior parameters are frozen through training") {
  env::GridEnv grid(tiny_fourier(3));
  TrainConfig cfg = base_cfg();
  cfg.policy.K = 4;
  cfg.policy.prior_weight = 3.0;
  cfg.strategy = policy::ExplorationStrategy::thompson();
  cfg.bootstrap_p = 0.7;
  Trainer trainer(grid, cfg);
  const uint64_t before = trainer.policy().prior_checksum();
  for (int i = 0; i < 30; ++i) trainer.step();
  CHECK(trainer.policy().prior_checksum() == before);
}

TEST_CASE("small grid on-policy run converges to tiny TB loss") {
  // Regression bound set from an initial verified run at this exact config.
  env::GridEnv grid(benign_fourier_h3());
  TrainConfig cfg = base_cfg();
  cfg.policy.hidden = {32, 32};
  cfg.batch_size = 64;
  cfg.model_lr = 0.004;
  cfg.logz_lr = 0.04;
  cfg.strategy = policy::ExplorationStrategy::on_policy();
  cfg.seed = 0;
  cfg.threads = 2;
  Trainer trainer(grid, cfg);
  double tail_mean = 0.0;
  const int steps = 2000;
  int tail = 0;
  for (int i = 0; i < steps; ++i) {
    const auto m = trainer.step();
    if (i >= steps - 200) {
      tail_mean += m.loss;
      ++tail;
    }
  }
  tail_mean /= tail;
  CHECK(tail_mean < 1e-3);
}

TEST_CASE("off-policy eps-noisy training reaches the same distribution as on-policy") {
  auto train_dp = [&](policy::ExplorationStrategy strategy, uint64_t seed) {
    env::GridEnv grid(benign_fourier_h3());
    TrainConfig cfg = base_cfg();
    cfg.policy.hidden = {32, 32};
    cfg.batch_size = 64;
    cfg.model_lr = 0.004;
    cfg.logz_lr = 0.04;
    cfg.strategy = strategy;
    cfg.seed = seed;
    cfg.threads = 2;
    Trainer trainer(grid, cfg);
    for (int i = 0; i < 1500; ++i) trainer.step();
    return eval::exact_policy_distribution(trainer.policy(), 0);
  };
  const auto on = train_dp(policy::ExplorationStrategy::on_policy(), 11);
  const auto off = train_dp(policy::ExplorationStrategy::eps_noisy(0.5), 12);
  CHECK(eval::l1_distance(on, off) < 0.02);
}

TEST_CASE("run_training: budget zero leaves an empty but complete artifact") {
  env::GridEnv grid(tiny_fourier(3));
  TrainConfig cfg = base_cfg();
  cfg.strategy = policy::ExplorationStrategy::on_policy();
  cfg.total_trajectories = 0;
  Trainer trainer(grid, cfg);
  namespace fs = std::filesystem;
  fs::create_directories("/tmp/gfn_run0");
  RunPaths paths{"/tmp/gfn_run0/metrics.csv", "/tmp/gfn_run0/checkpoint.bin", ""};
  const auto summary = run_training(trainer, paths);
  CHECK(summary.steps == 0);
  CHECK_FALSE(summary.aborted);
  CHECK(fs::exists(paths.checkpoint));
  std::ifstream f(paths.metrics_csv);
  std::string line;
  CHECK(std::getline(f, line));
  CHECK(line == "step,trajectories_seen,loss,mean_reward,L1_or_modes,wall_ms");
  CHECK_FALSE(std::getline(f, line));
}

TEST_CASE("run_training aborts on non-finite losses with artifacts intact") {
  env::GridEnv grid(tiny_fourier(3));
  TrainConfig cfg = base_cfg();
  cfg.strategy = policy::ExplorationStrategy::on_policy();
  cfg.total_trajectories = 10 * cfg.batch_size;
  Trainer trainer(grid, cfg);
  trainer.policy().params().at(0).data[0] = std::numeric_limits<double>::quiet_NaN();
  namespace fs = std::filesystem;
  fs::create_directories("/tmp/gfn_runnan");
  RunPaths paths{"/tmp/gfn_runnan/metrics.csv", "/tmp/gfn_runnan/checkpoint.bin", ""};
  const auto summary = run_training(trainer, paths);
  CHECK(summary.aborted);
  CHECK(!summary.abort_reason.empty());
  CHECK(fs::exists(paths.metrics_csv));
  CHECK(fs::exists(paths.checkpoint));
}

TEST_CASE("resumed runs match uninterrupted runs exactly") {
  namespace fs = std::filesystem;
  fs::create_directories("/tmp/gfn_resume");
  fs::create_directories("/tmp/gfn_oneshot");

  env::GridEnv grid(tiny_fourier(4));
  TrainConfig cfg = base_cfg();
  cfg.policy.K = 2;
  cfg.strategy = policy::ExplorationStrategy::thompson();
  cfg.bootstrap_p = 0.6;

  // First half.
  TrainConfig half = cfg;
  half.total_trajectories = 6 * cfg.batch_size;
  RunPaths rp{"/tmp/gfn_resume/metrics.csv", "/tmp/gfn_resume/checkpoint.bin", ""};
  {
    Trainer a(grid, half);
    const auto s = run_training(a, rp);
    REQUIRE_FALSE(s.aborted);
    REQUIRE(s.steps == 6);
  }
  // Second half from the checkpoint.
  uint64_t resumed_checksum = 0;
  {
    TrainConfig full = cfg;
    full.total_trajectories = 12 * cfg.batch_size;
    Trainer b(grid, full);
    b.restore_checkpoint(rp.checkpoint);
    CHECK(b.step_count() == 6);
    const auto s = run_training(b, rp, /*resume=*/true);
    REQUIRE_FALSE(s.aborted);
    CHECK(s.steps == 12);
    resumed_checksum = b.policy().params().checksum();
  }
  // Uninterrupted reference.
  TrainConfig full = cfg;
  full.total_trajectories = 12 * cfg.batch_size;
  Trainer c(grid, full);
  RunPaths rc{"/tmp/gfn_oneshot/metrics.csv", "/tmp/gfn_oneshot/checkpoint.bin", ""};
  const auto s = run_training(c, rc);
  REQUIRE(s.steps == 12);
  CHECK(c.policy().params().checksum() == resumed_checksum);

  const auto resumed_losses = csv_column(rp.metrics_csv, 2);
  const auto oneshot_losses = csv_column(rc.metrics_csv, 2);
  CHECK(resumed_losses == oneshot_losses);
}

TEST_CASE("loss trend: later losses undercut early losses for every strategy") {
  for (const auto& strategy :
       {policy::ExplorationStrategy::on_policy(), policy::ExplorationStrategy::tempering(1.05),
        policy::ExplorationStrategy::eps_noisy(0.05), policy::ExplorationStrategy::thompson()}) {
    env::GridEnv grid(env::FourierRewardParams::defaults(5));
    TrainConfig cfg = base_cfg();
    cfg.policy.hidden = {32, 32};
    cfg.batch_size = 16;
    cfg.strategy = strategy;
    if (strategy.kind == policy::ExplorationStrategy::Kind::kThompson) {
      cfg.policy.K = 4;
      cfg.policy.prior_weight = 2.0;
      cfg.bootstrap_p = 0.6;
    }
    Trainer trainer(grid, cfg);
    const int steps = 400;
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < steps; ++i) {
      const double loss = trainer.step().loss;
      if (i < steps / 10) head += loss;
      if (i >= steps - steps / 10) tail += loss;
    }
    CHECK(tail < head);
  }
}

#pragma once

// Random policy-shaped loss instances for finite-difference certification:
// an MLP trunk, masked log-prob picks at two states, a scalar parameter, and
// the squared combination. Shared by the unit tests and the acceptance suite.

#include <vector>

#include "gfn/nn.hpp"
#include "gfn/rng.hpp"

namespace gfn::testutil {

struct GradInstance {
  nn::ParamStore ps;
  nn::Mlp mlp;
  int logz = -1;
  std::vector<double> input0, input1;
  std::vector<uint8_t> mask0, mask1;
  int action0 = 0, action1 = 0;
  std::vector<double> prior1;  // constant prior added inside the fused pick
  double constant = 0.0;

  static GradInstance make(uint64_t seed) {
    GradInstance gi;
    RngStream rng(seed, StreamPurpose::kTest, 17);
    auto random_vec = [&rng](size_t n) {
      std::vector<double> v(n);
      for (double& x : v) x = rng.uniform01() * 2.0 - 1.0;
      return v;
    };
    const size_t in_dim = 2 + rng.uniform_below(4);
    const size_t out_dim = 2 + rng.uniform_below(3);
    std::vector<size_t> hidden;
    const size_t depth = rng.uniform_below(3);
    for (size_t i = 0; i < depth; ++i) hidden.push_back(2 + rng.uniform_below(4));
    gi.mlp = nn::Mlp::build(gi.ps, "f", nn::MLPShape{in_dim, hidden, out_dim});
    gi.logz = gi.ps.add("logz", {1}, nn::LrGroup::kLogZ);
    RngStream init(seed, StreamPurpose::kParamInit, 0);
    gi.mlp.init_params(gi.ps, init);
    gi.ps.at(gi.logz).data[0] = rng.uniform01() - 0.5;
    gi.input0 = random_vec(in_dim);
    gi.input1 = random_vec(in_dim);
    auto make_mask = [&](std::vector<uint8_t>& m, int& action) {
      m.assign(out_dim, 0);
      for (auto& b : m) b = rng.bernoulli(0.7);
      m[rng.uniform_below(out_dim)] = 1;
      do {
        action = static_cast<int>(rng.uniform_below(out_dim));
      } while (!m[static_cast<size_t>(action)]);
    };
    make_mask(gi.mask0, gi.action0);
    make_mask(gi.mask1, gi.action1);
    gi.prior1 = random_vec(out_dim);
    gi.constant = rng.uniform01() * 2.0 - 1.0;
    return gi;
  }

  // pick0 goes through the separate affine + pick ops, pick1 through the
  // fused member_log_prob op, so both formulations get certified.
  int build(nn::Tape& tape) const {
    auto features = [&](const std::vector<double>& input) {
      int node = tape.input(input);
      for (size_t l = 0; l + 1 < mlp.layer_count(); ++l) {
        node = tape.affine(mlp.weight_id(l), mlp.bias_id(l), node);
        node = tape.leaky_relu(node, 0.01);
      }
      return node;
    };
    const size_t last = mlp.layer_count() - 1;
    const int logits0 = tape.affine(mlp.weight_id(last), mlp.bias_id(last), features(input0));
    const int pick0 = tape.log_prob_pick(logits0, mask0, action0);
    const int pick1 =
        tape.member_log_prob(mlp.weight_id(last), mlp.bias_id(last), 0, mlp.output_dim(),
                             features(input1), prior1, 0.7, mask1, action1);
    const int z = tape.param_scalar(logz, 0);
    const std::vector<int> terms = {z, pick0, pick1};
    const std::vector<double> coeffs = {1.0, 1.0, -1.0};
    return tape.square(tape.scalar_combine(terms, coeffs, constant));
  }

  double value() const {
    nn::Tape tape(&ps);
    return tape.scalar_value(build(tape));
  }
};

inline double gradcheck_relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-2});
}

}  // namespace gfn::testutil

#include "gfn/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "gfn/harness.hpp"
#include "json.hpp"

namespace gfn::cli {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw ConfigError("config: " + msg); }

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) fail(where + " must be an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) fail("unknown key '" + key + "' in " + where);
}

template <typename T>
T get_or(const json& obj, const std::string& key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail("bad value type for " + where + "." + key);
  }
}

template <typename T>
T get_req(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) fail("missing required key " + where + "." + key);
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail("bad value type for " + where + "." + key);
  }
}

policy::ExplorationStrategy parse_strategy(const json& t) {
  const auto name = get_req<std::string>(t, "strategy", "train");
  const double temperature = get_or<double>(t, "temperature", "train", 1.0);
  const double epsilon = get_or<double>(t, "epsilon", "train", 0.0);
  try {
    if (name == "on_policy") return policy::ExplorationStrategy::on_policy();
    if (name == "tempering") return policy::ExplorationStrategy::tempering(temperature);
    if (name == "eps_noisy") return policy::ExplorationStrategy::eps_noisy(epsilon);
    if (name == "thompson") return policy::ExplorationStrategy::thompson();
  } catch (const std::invalid_argument& ex) {
    fail(ex.what());
  }
  fail("train.strategy must be one of on_policy|tempering|eps_noisy|thompson");
}

train::DpDiagnostics parse_dp(const std::string& s) {
  if (s == "none") return train::DpDiagnostics::kNone;
  if (s == "final") return train::DpDiagnostics::kFinal;
  if (s == "every_eval") return train::DpDiagnostics::kEveryEval;
  fail("train.dp_eval must be one of none|final|every_eval");
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& ex) {
    fail(std::string("not valid JSON: ") + ex.what());
  }
  check_keys(root, "config", {"label", "out_dir", "env", "policy", "train"});

  RunConfig cfg;
  cfg.raw = text;
  cfg.label = get_req<std::string>(root, "label", "config");
  if (cfg.label.empty()) fail("label must be non-empty");
  cfg.out_dir = get_or<std::string>(root, "out_dir", "config", "");

  if (!root.contains("env")) fail("missing required key env");
  const json& e = root.at("env");
  cfg.env.kind = get_req<std::string>(e, "kind", "env");
  if (cfg.env.kind == "grid") {
    check_keys(e, "env", {"kind", "H", "reward"});
    cfg.env.H = get_req<int>(e, "H", "env");
    if (cfg.env.H < 1) fail("env.H must be >= 1");
    if (e.contains("reward")) {
      const json& r = e.at("reward");
      check_keys(r, "env.reward", {"n_terms", "freq_max", "c", "d", "beta", "floor"});
      cfg.env.n_terms = get_or<int>(r, "n_terms", "env.reward", cfg.env.n_terms);
      cfg.env.freq_max = get_or<double>(r, "freq_max", "env.reward", cfg.env.freq_max);
      cfg.env.c = get_or<double>(r, "c", "env.reward", cfg.env.c);
      cfg.env.d = get_or<double>(r, "d", "env.reward", cfg.env.d);
      cfg.env.beta = get_or<double>(r, "beta", "env.reward", cfg.env.beta);
      cfg.env.floor = get_or<double>(r, "floor", "env.reward", cfg.env.floor);
    }
  } else if (cfg.env.kind == "sequence") {
    check_keys(e, "env", {"kind", "n", "num_modes", "mode_seed", "modes_file"});
    cfg.env.n = get_req<int>(e, "n", "env");
    if (cfg.env.n < 1) fail("env.n must be >= 1");
    cfg.env.num_modes = get_or<int>(e, "num_modes", "env", 0);
    cfg.env.mode_seed = get_or<uint64_t>(e, "mode_seed", "env", 0);
    cfg.env.modes_file = get_or<std::string>(e, "modes_file", "env", "");
    if (cfg.env.modes_file.empty() && cfg.env.num_modes < 1)
      fail("sequence env needs num_modes >= 1 or a modes_file");
  } else {
    fail("env.kind must be 'grid' or 'sequence'");
  }

  cfg.train.policy.hidden.clear();
  if (root.contains("policy")) {
    const json& p = root.at("policy");
    check_keys(p, "policy",
               {"K", "prior_weight", "hidden", "prior_hidden", "separate_pb", "leaky_slope"});
    cfg.train.policy.K = get_or<int>(p, "K", "policy", 1);
    cfg.train.policy.prior_weight = get_or<double>(p, "prior_weight", "policy", 0.0);
    if (p.contains("hidden"))
      cfg.train.policy.hidden = get_req<std::vector<size_t>>(p, "hidden", "policy");
    cfg.train.policy.prior_hidden =
        get_or<std::vector<size_t>>(p, "prior_hidden", "policy", {});
    cfg.train.policy.separate_pb = get_or<bool>(p, "separate_pb", "policy", false);
    cfg.train.policy.leaky_slope = get_or<double>(p, "leaky_slope", "policy", 0.01);
  }
  if (cfg.train.policy.hidden.empty()) {
    // Trunk depth follows the environment: two hidden layers on the grid,
    // three for sequences.
    cfg.train.policy.hidden =
        cfg.env.kind == "grid" ? std::vector<size_t>{256, 256} : std::vector<size_t>{256, 256, 256};
  }

  if (!root.contains("train")) fail("missing required key train");
  const json& t = root.at("train");
  check_keys(t, "train",
             {"strategy", "temperature", "epsilon", "bootstrap_p", "batch_size",
              "total_trajectories", "model_lr", "logz_lr", "adam_beta1", "adam_beta2",
              "adam_eps", "grad_clip", "seed", "eval_cadence", "window", "delta_mode",
              "threads", "checkpoint_every", "dp_eval"});
  cfg.train.strategy = parse_strategy(t);
  cfg.train.bootstrap_p = get_or<double>(t, "bootstrap_p", "train", 1.0);
  cfg.train.batch_size = get_or<int>(t, "batch_size", "train", 64);
  cfg.train.total_trajectories = get_or<long>(t, "total_trajectories", "train", 0L);
  cfg.train.model_lr = get_or<double>(t, "model_lr", "train", 1e-3);
  cfg.train.logz_lr = get_or<double>(t, "logz_lr", "train", 1e-1);
  cfg.train.adam.beta1 = get_or<double>(t, "adam_beta1", "train", 0.9);
  cfg.train.adam.beta2 = get_or<double>(t, "adam_beta2", "train", 0.999);
  cfg.train.adam.eps = get_or<double>(t, "adam_eps", "train", 1e-8);
  cfg.train.grad_clip = get_or<double>(t, "grad_clip", "train", 0.0);
  cfg.train.seed = get_or<uint64_t>(t, "seed", "train", 0);
  cfg.train.eval_cadence = get_or<long>(t, "eval_cadence", "train", 32L);
  cfg.train.window = get_or<uint64_t>(t, "window", "train", 50000);
  cfg.train.delta_mode = get_or<int>(t, "delta_mode", "train", 0);
  cfg.train.threads = get_or<int>(t, "threads", "train", 0);
  cfg.train.checkpoint_every = get_or<long>(t, "checkpoint_every", "train", 0L);
  cfg.train.dp = parse_dp(get_or<std::string>(t, "dp_eval", "train", "final"));

  try {
    cfg.train.validate();
  } catch (const std::exception& ex) {
    fail(ex.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::unique_ptr<env::Env> make_env(const EnvConfig& cfg, env::ModeRewardParams* modes_out) {
  if (cfg.kind == "grid") {
    env::FourierRewardParams p;
    p.H = cfg.H;
    p.n_terms = cfg.n_terms;
    p.a1.resize(static_cast<size_t>(cfg.n_terms));
    for (int k = 1; k <= cfg.n_terms; ++k)
      p.a1[static_cast<size_t>(k - 1)] = cfg.freq_max * k / cfg.n_terms;
    p.a2 = p.a1;
    p.b1 = p.a1;
    p.b2 = p.a1;
    p.c = cfg.c;
    p.d = cfg.d;
    p.beta = cfg.beta;
    p.floor = cfg.floor;
    return std::make_unique<env::GridEnv>(std::move(p));
  }
  if (cfg.kind == "sequence") {
    env::ModeRewardParams modes;
    if (!cfg.modes_file.empty()) {
      modes = env::read_mode_set(cfg.modes_file);
      if (modes.n != cfg.n) fail("modes_file sequence length does not match env.n");
    } else {
      modes = env::sample_mode_set(cfg.num_modes, cfg.n, cfg.mode_seed);
    }
    if (modes_out) *modes_out = modes;
    return std::make_unique<env::SeqEnv>(std::move(modes));
  }
  fail("unknown env kind " + cfg.kind);
}

std::string env_hash(const RunConfig& cfg) {
  json e;
  try {
    e = json::parse(cfg.raw).at("env");
  } catch (const json::exception&) {
    fail("cannot re-parse env section");
  }
  return sha1_hex(e.dump());  // nlohmann keeps object keys sorted, so this is canonical
}

// ---- presets -------------------------------------------------------------------

namespace {

// Shortest round-trip decimal form, so presets read the way the values are
// quoted (12.03, not 12.029999999999999).
std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// App-B-style grid rows; the *_desk variants scale the grid and budget down
// while keeping the per-strategy tuned learning rates.
std::string grid_preset(const std::string& label, int H, long budget, size_t window,
                        long cadence, const std::string& strategy, double temperature,
                        double epsilon, int K, double prior_weight, double bootstrap_p,
                        double model_lr, double logz_lr, bool separate_pb) {
  std::ostringstream s;
  s << "{\n"
    << "  \"label\": \"" << label << "\",\n"
    << "  \"env\": {\n"
    << "    \"kind\": \"grid\",\n"
    << "    \"H\": " << H << ",\n"
    << "    \"reward\": {\"n_terms\": 1000, \"freq_max\": 4.0, \"c\": -0.5, \"d\": 0.5, "
       "\"beta\": 1.5, \"floor\": 1e-08}\n"
    << "  },\n"
    << "  \"policy\": {\"K\": " << K << ", \"prior_weight\": " << num(prior_weight)
    << ", \"hidden\": [256, 256], \"prior_hidden\": [], \"separate_pb\": "
    << (separate_pb ? "true" : "false") << ", \"leaky_slope\": 0.01},\n"
    << "  \"train\": {\n"
    << "    \"strategy\": \"" << strategy << "\", \"temperature\": " << num(temperature)
    << ", \"epsilon\": " << num(epsilon) << ",\n"
    << "    \"bootstrap_p\": " << num(bootstrap_p) << ", \"batch_size\": 64, "
    << "\"total_trajectories\": " << budget << ",\n"
    << "    \"model_lr\": " << num(model_lr) << ", \"logz_lr\": " << num(logz_lr) << ",\n"
    << "    \"adam_beta1\": 0.9, \"adam_beta2\": 0.999, \"adam_eps\": 1e-08, "
       "\"grad_clip\": 0.0,\n"
    << "    \"seed\": 0, \"eval_cadence\": " << cadence << ", \"window\": " << window
    << ", \"delta_mode\": 0,\n"
    << "    \"threads\": 0, \"checkpoint_every\": 0, \"dp_eval\": \"final\"\n"
    << "  }\n"
    << "}\n";
  return s.str();
}

std::string seq_preset(const std::string& label, int n, int num_modes, uint64_t mode_seed,
                       int delta_mode, long budget, size_t window, long cadence,
                       const std::string& strategy, double temperature, double epsilon, int K,
                       double prior_weight, double bootstrap_p, double model_lr,
                       double logz_lr) {
  std::ostringstream s;
  s << "{\n"
    << "  \"label\": \"" << label << "\",\n"
    << "  \"env\": {\"kind\": \"sequence\", \"n\": " << n << ", \"num_modes\": " << num_modes
    << ", \"mode_seed\": " << mode_seed << ", \"modes_file\": \"\"},\n"
    << "  \"policy\": {\"K\": " << K << ", \"prior_weight\": " << num(prior_weight)
    << ", \"hidden\": [256, 256, 256], \"prior_hidden\": [], \"separate_pb\": false, "
       "\"leaky_slope\": 0.01},\n"
    << "  \"train\": {\n"
    << "    \"strategy\": \"" << strategy << "\", \"temperature\": " << num(temperature)
    << ", \"epsilon\": " << num(epsilon) << ",\n"
    << "    \"bootstrap_p\": " << num(bootstrap_p) << ", \"batch_size\": 16, "
    << "\"total_trajectories\": " << budget << ",\n"
    << "    \"model_lr\": " << num(model_lr) << ", \"logz_lr\": " << num(logz_lr) << ",\n"
    << "    \"adam_beta1\": 0.9, \"adam_beta2\": 0.999, \"adam_eps\": 1e-08, "
       "\"grad_clip\": 0.0,\n"
    << "    \"seed\": 0, \"eval_cadence\": " << cadence << ", \"window\": " << window
    << ", \"delta_mode\": " << delta_mode << ",\n"
    << "    \"threads\": 0, \"checkpoint_every\": 0, \"dp_eval\": \"none\"\n"
    << "  }\n"
    << "}\n";
  return s.str();
}

std::map<std::string, std::string> build_presets() {
  std::map<std::string, std::string> p;
  // Full-scale grid rows (64x64, 400k trajectories, window 2e5).
  p["grid-onpolicy-paper"] = grid_preset("grid-onpolicy-paper", 64, 400000, 200000, 100,
                                         "on_policy", 1.0, 0.0, 1, 0.0, 1.0, 0.00156, 0.00121,
                                         false);
  p["grid-tempering-paper"] = grid_preset("grid-tempering-paper", 64, 400000, 200000, 100,
                                          "tempering", 1.0458, 0.0, 1, 0.0, 1.0, 0.00236,
                                          0.0695, false);
  p["grid-epsnoisy-paper"] = grid_preset("grid-epsnoisy-paper", 64, 400000, 200000, 100,
                                         "eps_noisy", 1.0, 0.00534, 1, 0.0, 1.0, 0.00112,
                                         0.0634, false);
  p["grid-ts-paper"] = grid_preset("grid-ts-paper", 64, 400000, 200000, 100, "thompson", 1.0,
                                   0.0, 100, 12.03, 0.274, 0.00266, 0.0976, false);
  // Desk-scale grid rows (32x32, 1e5 trajectories, window 5e4).
  p["grid-onpolicy-desk"] = grid_preset("grid-onpolicy-desk", 32, 100000, 50000, 32,
                                        "on_policy", 1.0, 0.0, 1, 0.0, 1.0, 0.00156, 0.00121,
                                        false);
  p["grid-tempering-desk"] = grid_preset("grid-tempering-desk", 32, 100000, 50000, 32,
                                         "tempering", 1.0458, 0.0, 1, 0.0, 1.0, 0.00236,
                                         0.0695, false);
  p["grid-epsnoisy-desk"] = grid_preset("grid-epsnoisy-desk", 32, 100000, 50000, 32,
                                        "eps_noisy", 1.0, 0.00534, 1, 0.0, 1.0, 0.00112,
                                        0.0634, false);
  p["grid-ts-desk"] = grid_preset("grid-ts-desk", 32, 100000, 50000, 32, "thompson", 1.0, 0.0,
                                  100, 12.03, 0.274, 0.00266, 0.0976, false);
  p["grid-ts-separate-pb-desk"] =
      grid_preset("grid-ts-separate-pb-desk", 32, 100000, 50000, 32, "thompson", 1.0, 0.0, 100,
                  12.03, 0.274, 0.00266, 0.0976, true);
  // Full-scale sequence rows (n=120, 50k iterations x batch 16).
  p["seq-onpolicy-paper"] = seq_preset("seq-onpolicy-paper", 120, 60, 0, 0, 800000, 200000,
                                       500, "on_policy", 1.0, 0.0, 1, 0.0, 1.0, 0.0001, 0.001);
  p["seq-tempering-paper"] = seq_preset("seq-tempering-paper", 120, 60, 0, 0, 800000, 200000,
                                        500, "tempering", 1.1, 0.0, 1, 0.0, 1.0, 0.0001, 0.001);
  p["seq-epsnoisy-paper"] = seq_preset("seq-epsnoisy-paper", 120, 60, 0, 0, 800000, 200000,
                                       500, "eps_noisy", 1.0, 0.005, 1, 0.0, 1.0, 0.001, 0.001);
  p["seq-ts-paper"] = seq_preset("seq-ts-paper", 120, 60, 0, 0, 800000, 200000, 500,
                                 "thompson", 1.0, 0.0, 50, 4.0, 0.75, 0.001, 0.001);
  // Desk-scale sequence rows (n=20, 8 modes, 1e5 trajectories).
  p["seq-onpolicy-desk"] = seq_preset("seq-onpolicy-desk", 20, 8, 7, 2, 100000, 50000, 125,
                                      "on_policy", 1.0, 0.0, 1, 0.0, 1.0, 0.0001, 0.001);
  p["seq-tempering-desk"] = seq_preset("seq-tempering-desk", 20, 8, 7, 2, 100000, 50000, 125,
                                       "tempering", 1.1, 0.0, 1, 0.0, 1.0, 0.0001, 0.001);
  p["seq-epsnoisy-desk"] = seq_preset("seq-epsnoisy-desk", 20, 8, 7, 2, 100000, 50000, 125,
                                      "eps_noisy", 1.0, 0.005, 1, 0.0, 1.0, 0.001, 0.001);
  p["seq-ts-desk"] = seq_preset("seq-ts-desk", 20, 8, 7, 2, 100000, 50000, 125, "thompson",
                                1.0, 0.0, 50, 4.0, 0.75, 0.001, 0.001);
  return p;
}

}  // namespace

const std::map<std::string, std::string>& builtin_presets() {
  static const std::map<std::string, std::string> presets = build_presets();
  return presets;
}

RunConfig load_preset(const std::string& name) {
  const auto& presets = builtin_presets();
  auto it = presets.find(name);
  if (it == presets.end()) {
    std::string names;
    for (const auto& [n, _] : presets) names += n + " ";
    fail("unknown preset '" + name + "'; available: " + names);
  }
  return parse_run_config(it->second);
}

}  // namespace gfn::cli

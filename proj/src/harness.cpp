#include "gfn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

namespace gfn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- SHA-1 ---------------------------------------------------------------------

namespace {

struct Sha1 {
  uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
  uint64_t length = 0;
  uint8_t block[64];
  size_t fill = 0;

  static uint32_t rol(uint32_t x, int s) { return (x << s) | (x >> (32 - s)); }

  void process() {
    uint32_t w[80];
    for (int i = 0; i < 16; ++i)
      w[i] = (uint32_t(block[4 * i]) << 24) | (uint32_t(block[4 * i + 1]) << 16) |
             (uint32_t(block[4 * i + 2]) << 8) | uint32_t(block[4 * i + 3]);
    for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
    uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
    for (int i = 0; i < 80; ++i) {
      uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5A827999u;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1u;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDCu;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6u;
      }
      const uint32_t tmp = rol(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = tmp;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
  }

  void update(const uint8_t* data, size_t n) {
    length += n;
    while (n > 0) {
      const size_t take = std::min(n, sizeof(block) - fill);
      std::copy(data, data + take, block + fill);
      fill += take;
      data += take;
      n -= take;
      if (fill == 64) {
        process();
        fill = 0;
      }
    }
  }

  std::string finish() {
    const uint64_t bits = length * 8;
    const uint8_t one = 0x80;
    update(&one, 1);
    const uint8_t zero = 0;
    while (fill != 56) update(&zero, 1);
    for (int i = 7; i >= 0; --i) {
      const uint8_t b = static_cast<uint8_t>(bits >> (8 * i));
      update(&b, 1);
    }
    char out[41];
    for (int i = 0; i < 5; ++i) std::snprintf(out + 8 * i, 9, "%08x", h[i]);
    return std::string(out, 40);
  }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

std::string sha1_hex(const std::string& bytes) {
  Sha1 s;
  s.update(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size());
  return s.finish();
}

std::string git_blob_sha1(const std::string& bytes) {
  std::string header = "blob " + std::to_string(bytes.size());
  header.push_back('\0');
  return sha1_hex(header + bytes);
}

std::string output_root() {
  const char* root = std::getenv("GFN_OUT_ROOT");
  return root && *root ? root : "runs";
}

// ---- train ---------------------------------------------------------------------

TrainOutcome cmd_train(const RunConfig& cfg, bool resume, const std::string& out_dir_override) {
  std::string dir = !out_dir_override.empty() ? out_dir_override
                    : !cfg.out_dir.empty()    ? cfg.out_dir
                                              : output_root() + "/" + cfg.label;
  fs::create_directories(dir);
  const std::string config_path = dir + "/config.json";
  const std::string ckpt_path = dir + "/checkpoint.bin";
  const bool resuming = resume && fs::exists(ckpt_path);
  if (resuming) {
    if (!fs::exists(config_path) || slurp(config_path) != cfg.raw)
      throw ConfigError("resume: config does not match the artifact snapshot");
  } else {
    spit(config_path, cfg.raw);
  }

  env::ModeRewardParams modes;
  auto environment = make_env(cfg.env, &modes);
  if (cfg.env.kind == "sequence") env::write_mode_set(dir + "/modes.txt", modes);

  train::Trainer trainer(*environment, cfg.train);
  if (resuming) trainer.restore_checkpoint(ckpt_path);

  train::RunPaths paths{dir + "/metrics.csv", ckpt_path, dir + "/dp_eval.csv"};
  TrainOutcome out;
  out.artifact_dir = dir;
  out.summary = train::run_training(trainer, paths, resuming);

  json summary;
  summary["label"] = cfg.label;
  summary["strategy"] = cfg.train.strategy.name();
  summary["seed"] = cfg.train.seed;
  summary["env_kind"] = cfg.env.kind;
  summary["env_hash"] = env_hash(cfg);
  summary["config_sha1"] = git_blob_sha1(cfg.raw);
  summary["steps"] = out.summary.steps;
  summary["trajectories"] = out.summary.trajectories;
  summary["final_loss"] = out.summary.final_loss;
  summary["final_metric"] = out.summary.final_metric;
  summary["wall_ms"] = out.summary.wall_ms;
  summary["aborted"] = out.summary.aborted;
  summary["abort_reason"] = out.summary.abort_reason;
  spit(dir + "/summary.json", summary.dump(2) + "\n");
  return out;
}

// ---- eval ----------------------------------------------------------------------

EvalOutcome cmd_eval(const std::string& artifact_dir, bool exact) {
  RunConfig cfg = load_run_config(artifact_dir + "/config.json");
  auto environment = make_env(cfg.env);
  train::Trainer trainer(*environment, cfg.train);
  trainer.restore_checkpoint(artifact_dir + "/checkpoint.bin");

  EvalOutcome out;
  out.trajectories = trainer.trajectories_seen();
  out.windowed_metric = trainer.eval_metric();

  json report;
  report["trajectories"] = out.trajectories;
  report["windowed_metric"] = out.windowed_metric;

  if (!trainer.window().empty())
    eval::write_distribution_csv(artifact_dir + "/empirical.csv",
                                 eval::empirical_distribution(trainer.window()));

  const bool grid = cfg.env.kind == "grid";
  if (exact && grid) {
    const auto& pol = trainer.policy();
    const auto& target = trainer.target();
    eval::write_distribution_csv(artifact_dir + "/target.csv", target);
    std::ofstream f(artifact_dir + "/eval_exact.csv", std::ios::trunc);
    f << "scope,member,l1_exact\n";
    std::map<std::string, double> acc;
    const int K = pol.ensemble_size();
    for (int k = 0; k < K; ++k) {
      const auto table = eval::exact_policy_distribution(pol, k);
      const double l1 = eval::l1_distance(table, target);
      if (k == 0) out.exact_member0_l1 = l1;
      f << "member," << k << "," << fmt_g(l1) << "\n";
      for (const auto& [key, p] : table.entries()) acc[key] += p / static_cast<double>(K);
    }
    const auto mixture = eval::DistributionTable::from_weights(std::move(acc));
    out.exact_mixture_l1 = eval::l1_distance(mixture, target);
    f << "mixture,-1," << fmt_g(*out.exact_mixture_l1) << "\n";
    eval::write_distribution_csv(artifact_dir + "/mixture.csv", mixture);
    report["exact_mixture_l1"] = *out.exact_mixture_l1;
    report["exact_member0_l1"] = *out.exact_member0_l1;
  }
  spit(artifact_dir + "/eval.json", report.dump(2) + "\n");
  return out;
}

// ---- compare --------------------------------------------------------------------

ArtifactInfo load_artifact(const std::string& dir) {
  ArtifactInfo info;
  info.dir = dir;
  const json summary = json::parse(slurp(dir + "/summary.json"));
  info.label = summary.at("label").get<std::string>();
  info.strategy = summary.at("strategy").get<std::string>();
  info.seed = summary.at("seed").get<uint64_t>();
  info.env_hash = summary.at("env_hash").get<std::string>();
  info.final_metric = summary.at("final_metric").get<double>();
  info.higher_is_better = summary.at("env_kind").get<std::string>() == "sequence";

  std::ifstream f(dir + "/metrics.csv");
  if (!f) throw std::runtime_error("cannot open " + dir + "/metrics.csv");
  std::string line;
  if (!std::getline(f, line) || split_csv_row(line).size() != 6 ||
      split_csv_row(line)[0] != "step")
    throw std::runtime_error("unexpected metrics header in " + dir);
  while (std::getline(f, line)) {
    const auto cells = split_csv_row(line);
    if (cells.size() != 6 || cells[4].empty()) continue;
    info.curve.emplace_back(std::stol(cells[1]), std::stod(cells[4]));
  }
  return info;
}

namespace {

double interpolate(const std::vector<std::pair<long, double>>& curve, long x) {
  if (curve.empty()) throw std::runtime_error("empty metric curve");
  if (x <= curve.front().first) return curve.front().second;
  if (x >= curve.back().first) return curve.back().second;
  for (size_t i = 1; i < curve.size(); ++i) {
    if (curve[i].first >= x) {
      const auto [x0, y0] = curve[i - 1];
      const auto [x1, y1] = curve[i];
      if (x1 == x0) return y1;
      const double w = static_cast<double>(x - x0) / static_cast<double>(x1 - x0);
      return y0 + w * (y1 - y0);
    }
  }
  return curve.back().second;
}

std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return {mean, sd / std::sqrt(n)};
}

}  // namespace

Comparison cmd_compare(const std::vector<std::string>& dirs, const std::string& out_csv) {
  if (dirs.size() < 2) throw ConfigError("compare: need at least two artifacts");
  std::vector<ArtifactInfo> runs;
  for (const auto& d : dirs) runs.push_back(load_artifact(d));
  for (const auto& r : runs)
    if (r.env_hash != runs.front().env_hash)
      throw ConfigError("compare: environment mismatch between " + runs.front().dir + " and " +
                        r.dir);

  Comparison cmp;
  cmp.higher_is_better = runs.front().higher_is_better;

  // Common checkpoint grid: union of eval points inside the overlap window.
  long lo = 0, hi = std::numeric_limits<long>::max();
  std::vector<long> grid;
  for (const auto& r : runs) {
    if (r.curve.empty()) throw std::runtime_error("compare: no metric rows in " + r.dir);
    lo = std::max(lo, r.curve.front().first);
    hi = std::min(hi, r.curve.back().first);
    for (const auto& [x, y] : r.curve) grid.push_back(x);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::erase_if(grid, [&](long x) { return x < lo || x > hi; });
  if (grid.empty()) throw std::runtime_error("compare: metric curves do not overlap");
  cmp.grid = grid;

  std::vector<std::vector<double>> resampled(runs.size());
  for (size_t i = 0; i < runs.size(); ++i)
    for (long x : grid) resampled[i].push_back(interpolate(runs[i].curve, x));

  std::vector<std::string> order;
  std::map<std::string, std::vector<size_t>> members;
  for (size_t i = 0; i < runs.size(); ++i) {
    if (!members.count(runs[i].strategy)) order.push_back(runs[i].strategy);
    members[runs[i].strategy].push_back(i);
  }
  for (const auto& strategy : order) {
    ComparisonGroup g;
    g.strategy = strategy;
    g.runs = static_cast<int>(members[strategy].size());
    for (size_t p = 0; p < grid.size(); ++p) {
      std::vector<double> xs;
      for (size_t i : members[strategy]) xs.push_back(resampled[i][p]);
      const auto [m, se] = mean_stderr(xs);
      g.mean.push_back(m);
      g.stderr_.push_back(se);
    }
    for (size_t i : members[strategy]) g.finals.push_back(runs[i].final_metric);
    std::tie(g.final_mean, g.final_stderr) = mean_stderr(g.finals);
    cmp.groups.push_back(std::move(g));
  }
  if (runs.size() == 2)
    for (size_t p = 0; p < grid.size(); ++p)
      cmp.pair_diff.push_back(resampled[0][p] - resampled[1][p]);

  if (!out_csv.empty()) {
    std::ofstream f(out_csv, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + out_csv);
    f << "trajectories_seen";
    for (const auto& g : cmp.groups)
      f << "," << g.strategy << "_mean," << g.strategy << "_stderr," << g.strategy << "_n";
    if (!cmp.pair_diff.empty()) f << ",diff";
    f << "\n";
    for (size_t p = 0; p < grid.size(); ++p) {
      f << grid[p];
      for (const auto& g : cmp.groups)
        f << "," << fmt_g(g.mean[p]) << "," << fmt_g(g.stderr_[p]) << "," << g.runs;
      if (!cmp.pair_diff.empty()) f << "," << fmt_g(cmp.pair_diff[p]);
      f << "\n";
    }
  }
  return cmp;
}

// ---- sweep ----------------------------------------------------------------------

namespace {

void set_dotted(json& root, const std::string& path, const json& value) {
  json* node = &root;
  std::string part;
  std::stringstream ss(path);
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("sweep: empty axis path");
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  (*node)[parts.back()] = value;
}

std::string axis_suffix(const std::string& path, const json& value) {
  const auto pos = path.rfind('.');
  const std::string leaf = pos == std::string::npos ? path : path.substr(pos + 1);
  std::string v = value.dump();
  std::erase_if(v, [](char c) { return c == '"'; });
  return leaf + "=" + v;
}

}  // namespace

SweepOutcome cmd_sweep(const std::string& spec_text, const std::string& out_dir_override) {
  json spec;
  try {
    spec = json::parse(spec_text);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("sweep spec is not valid JSON: ") + ex.what());
  }
  for (const auto& [key, value] : spec.items())
    if (key != "label" && key != "base" && key != "base_preset" && key != "axes" &&
        key != "seeds")
      throw ConfigError("sweep: unknown key '" + key + "'");

  const std::string sweep_label =
      spec.contains("label") ? spec.at("label").get<std::string>() : std::string("sweep");
  std::string base_text;
  if (spec.contains("base_preset")) {
    const auto name = spec.at("base_preset").get<std::string>();
    if (!builtin_presets().count(name)) throw ConfigError("sweep: unknown base_preset " + name);
    base_text = builtin_presets().at(name);
  } else if (spec.contains("base")) {
    base_text = spec.at("base").dump(2);
  } else {
    throw ConfigError("sweep: need base or base_preset");
  }

  std::vector<std::pair<std::string, std::vector<json>>> axes;
  if (spec.contains("axes"))
    for (const auto& [path, values] : spec.at("axes").items()) {
      if (!values.is_array() || values.empty())
        throw ConfigError("sweep: axis '" + path + "' must be a non-empty array");
      axes.emplace_back(path, std::vector<json>(values.begin(), values.end()));
    }
  std::vector<uint64_t> seeds;
  if (spec.contains("seeds"))
    for (const auto& s : spec.at("seeds")) seeds.push_back(s.get<uint64_t>());
  if (seeds.empty()) seeds.push_back(0);

  SweepOutcome out;
  out.sweep_dir =
      !out_dir_override.empty() ? out_dir_override : output_root() + "/" + sweep_label;
  fs::create_directories(out.sweep_dir);

  // Cartesian product in axis order, seeds innermost.
  std::vector<size_t> idx(axes.size(), 0);
  bool higher_is_better = false;
  bool done = false;
  while (!done) {
    for (uint64_t seed : seeds) {
      json derived = json::parse(base_text);
      std::string label = sweep_label;
      for (size_t a = 0; a < axes.size(); ++a) {
        set_dotted(derived, axes[a].first, axes[a].second[idx[a]]);
        label += "-" + axis_suffix(axes[a].first, axes[a].second[idx[a]]);
      }
      derived["train"]["seed"] = seed;
      label += "-s" + std::to_string(seed);
      derived["label"] = label;
      derived["out_dir"] = "";
      SweepRun run;
      run.label = label;
      run.dir = out.sweep_dir + "/" + label;
      try {
        const RunConfig cfg = parse_run_config(derived.dump(2) + "\n");
        higher_is_better = cfg.env.kind == "sequence";
        const TrainOutcome res = cmd_train(cfg, false, run.dir);
        if (res.summary.aborted) {
          run.ok = false;
          run.error = res.summary.abort_reason;
        } else {
          run.ok = true;
          run.final_metric = res.summary.final_metric;
        }
      } catch (const std::exception& ex) {
        run.ok = false;
        run.error = ex.what();
      }
      out.runs.push_back(std::move(run));
    }
    done = true;
    for (size_t a = 0; a < axes.size(); ++a) {
      if (++idx[a] < axes[a].second.size()) {
        done = false;
        break;
      }
      idx[a] = 0;
    }
    if (axes.empty()) done = true;
  }

  for (const auto& r : out.runs)
    if (r.ok) out.leaderboard.push_back(r);
  std::stable_sort(out.leaderboard.begin(), out.leaderboard.end(),
                   [&](const SweepRun& a, const SweepRun& b) {
                     return higher_is_better ? a.final_metric > b.final_metric
                                             : a.final_metric < b.final_metric;
                   });

  {
    std::ofstream f(out.sweep_dir + "/sweep_results.csv", std::ios::trunc);
    f << "label,dir,status,final_metric,error\n";
    for (const auto& r : out.runs) {
      std::string err = r.error;
      std::replace(err.begin(), err.end(), ',', ';');
      f << r.label << "," << r.dir << "," << (r.ok ? "ok" : "failed") << ","
        << (r.ok ? fmt_g(r.final_metric) : "") << "," << err << "\n";
    }
  }
  {
    std::ofstream f(out.sweep_dir + "/leaderboard.csv", std::ios::trunc);
    f << "rank,label,final_metric,dir\n";
    for (size_t i = 0; i < out.leaderboard.size(); ++i)
      f << i + 1 << "," << out.leaderboard[i].label << ","
        << fmt_g(out.leaderboard[i].final_metric) << "," << out.leaderboard[i].dir << "\n";
  }
  return out;
}

SweepOutcome cmd_sweep_file(const std::string& spec_path, const std::string& out_dir_override) {
  return cmd_sweep(slurp(spec_path), out_dir_override);
}

void write_preset_files(const std::string& dir) {
  fs::create_directories(dir);
  for (const auto& [name, text] : builtin_presets()) spit(dir + "/" + name + ".json", text);
}

}  // namespace gfn::cli

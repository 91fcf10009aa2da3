#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gfn/harness.hpp"
#include "gfn/kernels.hpp"

// Exit codes: 0 success, 1 configuration error, 2 runtime abort.

namespace {

int run(int argc, char** argv) {
  CLI::App app{"GFlowNet trajectory-balance trainer and exploration-strategy harness"};
  app.require_subcommand(1);

  std::string config_path, preset, out_dir;
  bool resume = false;
  auto* train = app.add_subcommand("train", "train a run from a config file or preset");
  train->add_option("config", config_path, "path to a run config (JSON)");
  train->add_option("--preset", preset, "built-in preset name (see `gfn presets`)");
  train->add_option("--out", out_dir, "artifact directory override");
  train->add_flag("--resume", resume, "continue from the artifact checkpoint");

  std::string eval_dir;
  bool exact = false;
  auto* eval = app.add_subcommand("eval", "re-evaluate a finished artifact");
  eval->add_option("artifact", eval_dir, "artifact directory")->required();
  eval->add_flag("--exact", exact, "also run the exact DP oracle per ensemble member");

  std::vector<std::string> compare_dirs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "align metric curves across artifacts");
  compare->add_option("artifacts", compare_dirs, "artifact directories")->expected(-2);
  compare->add_option("--out", compare_out, "comparison CSV path");

  std::string sweep_spec, sweep_out;
  auto* sweep = app.add_subcommand("sweep", "grid-sweep over config axes");
  sweep->add_option("spec", sweep_spec, "sweep spec (JSON)")->required();
  sweep->add_option("--out", sweep_out, "sweep directory override");

  std::string presets_dump;
  auto* presets = app.add_subcommand("presets", "list built-in presets");
  presets->add_option("--write-dir", presets_dump, "write preset files into a directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (train->parsed()) {
    if (config_path.empty() == preset.empty()) {
      std::fprintf(stderr, "train: give exactly one of <config> or --preset\n");
      return 1;
    }
    const gfn::cli::RunConfig cfg = preset.empty() ? gfn::cli::load_run_config(config_path)
                                                   : gfn::cli::load_preset(preset);
    std::printf("kernels: %s\n", gfn::kernels::active_ops().name);
    const auto out = gfn::cli::cmd_train(cfg, resume, out_dir);
    std::printf("artifact: %s\n", out.artifact_dir.c_str());
    std::printf("steps=%llu trajectories=%ld final_loss=%.6g final_metric=%.6g wall_ms=%.0f\n",
                static_cast<unsigned long long>(out.summary.steps), out.summary.trajectories,
                out.summary.final_loss, out.summary.final_metric, out.summary.wall_ms);
    if (out.summary.aborted) {
      std::fprintf(stderr, "run aborted: %s\n", out.summary.abort_reason.c_str());
      return 2;
    }
    return 0;
  }
  if (eval->parsed()) {
    const auto out = gfn::cli::cmd_eval(eval_dir, exact);
    std::printf("trajectories=%ld windowed_metric=%.6g\n", out.trajectories,
                out.windowed_metric);
    if (out.exact_mixture_l1)
      std::printf("exact mixture L1=%.6g member0 L1=%.6g\n", *out.exact_mixture_l1,
                  *out.exact_member0_l1);
    return 0;
  }
  if (compare->parsed()) {
    const auto cmp = gfn::cli::cmd_compare(compare_dirs, compare_out);
    std::printf("common checkpoints: %zu (trajectories %ld..%ld)\n", cmp.grid.size(),
                cmp.grid.front(), cmp.grid.back());
    for (const auto& g : cmp.groups)
      std::printf("%-14s n=%d final %s = %.6g +- %.6g\n", g.strategy.c_str(), g.runs,
                  cmp.higher_is_better ? "modes" : "L1", g.final_mean, g.final_stderr);
    return 0;
  }
  if (sweep->parsed()) {
    const auto out = gfn::cli::cmd_sweep_file(sweep_spec, sweep_out);
    int failed = 0;
    for (const auto& r : out.runs) failed += !r.ok;
    std::printf("sweep: %zu runs, %d failed; results in %s\n", out.runs.size(), failed,
                out.sweep_dir.c_str());
    for (size_t i = 0; i < out.leaderboard.size() && i < 10; ++i)
      std::printf("  #%zu %s final_metric=%.6g\n", i + 1, out.leaderboard[i].label.c_str(),
                  out.leaderboard[i].final_metric);
    return failed == 0 ? 0 : 2;
  }
  if (presets->parsed()) {
    for (const auto& [name, text] : gfn::cli::builtin_presets())
      std::printf("%s\n", name.c_str());
    if (!presets_dump.empty()) gfn::cli::write_preset_files(presets_dump);
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const gfn::cli::ConfigError& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return 1;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 2;
  }
}

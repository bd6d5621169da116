#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace varlab::cli;
  CLI::App app{"varlab: stability experiments for deterministic actor-critic agents"};
  app.require_subcommand(1);

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train one seed and write its run records and policy");
  train_cmd->add_option("config", train.config_path, "Experiment config (JSON)")->required();
  train_cmd->add_option("--seed", train.seed, "Run seed (master seed in paired mode)");
  train_cmd->add_option("--preset", train.preset, "Method preset applied on top of the config");
  train_cmd->add_option("--out", train.out_dir, "Output directory (defaults to the config's output_dir)");
  train_cmd->add_option("--pair", train.pair, "Pair index for paired-seed runs");
  train_cmd->add_option("--side", train.side, "Pair side, A or B")->check(CLI::IsMember({"A", "B"}));

  BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "Run presets x envs x seeds and write summary.csv");
  bench_cmd->add_option("config", bench.config_path, "Experiment config (JSON)")->required();
  bench_cmd->add_option("--preset", bench.presets, "Presets to run")->delimiter(',');
  bench_cmd->add_option("--env", bench.envs, "Environments (defaults to the config's env)")->delimiter(',');
  bench_cmd->add_option("--seeds", bench.seeds, "Seed count (seeds 0..N-1)");
  bench_cmd->add_option("--parallel", bench.parallel, "Worker threads (VARLAB_THREADS overrides)");
  bench_cmd->add_option("--out", bench.out_dir, "Output directory (defaults to the config's output_dir)");

  AnalyzeOptions analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Analyses over a directory of run records");
  analyze_cmd->add_option("run_dir", analyze.run_dir, "Directory holding run records")->required();
  analyze_cmd->add_option("--what", analyze.what, "decomp, corr, profile, saturation, sparse-q or gain-ratio")
      ->required()
      ->check(CLI::IsMember({"decomp", "corr", "profile", "saturation", "sparse-q", "gain-ratio"}));
  analyze_cmd->add_option("--out", analyze.out_dir, "Report directory (defaults to run_dir)");
  analyze_cmd->add_option("--taus", analyze.taus, "Profile thresholds")->delimiter(',');
  analyze_cmd->add_option("--floor", analyze.stuck_floor, "Score floor for the stuck flag");
  analyze_cmd->add_option("--alg-var", analyze.alg_var, "Algorithm variance for gain-ratio");
  analyze_cmd->add_option("--sample-var", analyze.sample_var, "Sample variance for gain-ratio");
  analyze_cmd->add_option("--s-from", analyze.s_from, "Episodes per evaluation now");
  analyze_cmd->add_option("--s-to", analyze.s_to, "Episodes per evaluation proposed");

  ProbeOptions probe;
  auto* probe_cmd = app.add_subcommand("probe", "Random-action probe of a saved policy");
  probe_cmd->add_option("policy", probe.policy_path, "Policy file")->required();
  probe_cmd->add_option("--env", probe.env, "Environment")->required();
  probe_cmd->add_option("--p-grid", probe.p_grid, "Swap probabilities")->delimiter(',');
  probe_cmd->add_option("--episodes", probe.episodes, "Episodes per p");
  probe_cmd->add_option("--seed", probe.seed, "Evaluation seed");
  probe_cmd->add_option("--out", probe.out_path, "Output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitBadInput;
  }

  if (*train_cmd) return cmd_train(train, std::cout, std::cerr);
  if (*bench_cmd) return cmd_bench(bench, std::cout, std::cerr);
  if (*analyze_cmd) return cmd_analyze(analyze, std::cout, std::cerr);
  return cmd_probe(probe, std::cout, std::cerr);
}

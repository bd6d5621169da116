#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <tuple>

#include "varlab/bench.hpp"
#include "varlab/config.hpp"
#include "varlab/envworld.hpp"
#include "varlab/records_io.hpp"

namespace varlab::cli {

namespace fs = std::filesystem;

namespace {

// Bad user input; reported on stderr with exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

void check_preset(const std::string& name) {
  if (!is_preset(name)) {
    throw UsageError("unknown preset '" + name + "'; valid presets: " + join(preset_names(), ", "));
  }
}

// Runs grouped by their directory relative to the analysis root.
using RunGroups = std::map<std::string, std::vector<RunRecord>>;

RunGroups collect_runs(const fs::path& root) {
  if (!fs::is_directory(root)) throw UsageError("run directory '" + root.string() + "' does not exist");
  RunGroups groups;
  std::set<fs::path> dirs{root};
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_directory()) dirs.insert(entry.path());
  }
  for (const auto& dir : dirs) {
    auto runs = read_runs(dir);
    if (runs.empty()) continue;
    std::string name = fs::relative(dir, root).generic_string();
    groups[name] = std::move(runs);
  }
  return groups;
}

std::vector<double> final_scores(const std::vector<RunRecord>& runs) {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(r.final_score());
  return out;
}

// [runs x episodes] scores at the last eval point.
std::vector<std::vector<double>> last_point_matrix(const std::vector<RunRecord>& runs) {
  std::vector<std::vector<double>> m;
  for (const auto& r : runs) {
    if (!r.eval_scores.empty()) m.push_back(r.eval_scores.back());
  }
  return m;
}

void write_csv(const fs::path& path, const CsvTable& table, std::ostream& out) {
  atomic_write(path, table.to_string());
  out << "wrote " << path.string() << "\n";
}

std::string str(double x) { return format_double(x); }

int analyze_decomp(const RunGroups& groups, const fs::path& out_dir, std::ostream& out) {
  CsvTable t{kDecompCsvSchema, {"group", "metric", "value"}, {}};
  for (const auto& [name, runs] : groups) {
    const auto m = last_point_matrix(runs);
    if (m.size() < 2) throw UsageError("decomp: group '" + name + "' has fewer than 2 runs");
    const VarDecomp d = variance_decomposition(m);
    t.rows.push_back({name, "alg_var", str(d.alg_var)});
    t.rows.push_back({name, "alg_var_raw", str(d.alg_var_raw)});
    t.rows.push_back({name, "sample_var", str(d.sample_var)});
    t.rows.push_back({name, "perf_variance", str(d.perf_variance())});
    t.rows.push_back({name, "runs", std::to_string(d.runs)});
    t.rows.push_back({name, "samples", std::to_string(d.samples)});
  }
  write_csv(out_dir / "decomp.csv", t, out);
  return kExitOk;
}

int analyze_corr(const RunGroups& groups, const fs::path& out_dir, std::ostream& out) {
  CsvTable t{kCorrCsvSchema, {"group", "step", "rho"}, {}};
  for (const auto& [name, runs] : groups) {
    std::map<std::uint64_t, RunRecord> a;
    std::map<std::uint64_t, RunRecord> b;
    for (const auto& r : runs) {
      if (!r.pair_id) continue;
      (r.pair_side == "B" ? b : a)[*r.pair_id] = r;
    }
    std::vector<RunRecord> va;
    std::vector<RunRecord> vb;
    for (const auto& [id, rec] : a) {
      auto it = b.find(id);
      if (it == b.end()) continue;
      va.push_back(rec);
      vb.push_back(it->second);
    }
    if (va.size() < 3) throw UsageError("corr: group '" + name + "' needs at least 3 complete pairs");
    const CorrelationReport rep = correlation_from_runs(va, vb);
    for (std::size_t k = 0; k < rep.steps.size(); ++k) {
      t.rows.push_back({name, std::to_string(rep.steps[k]), rep.per_point[k] ? str(*rep.per_point[k]) : ""});
    }
    t.rows.push_back({name, "time_averaged", str(rep.time_averaged)});
    t.rows.push_back({name, "excluded_points", std::to_string(rep.excluded)});
    t.rows.push_back({name, "failed_runs_included", std::to_string(rep.failed_runs)});
    out << name << ": time-averaged rho " << str(rep.time_averaged) << " over " << va.size() << " pairs ("
        << rep.excluded << " undefined points excluded, " << rep.failed_runs << " failed runs included)\n";
  }
  write_csv(out_dir / "corr.csv", t, out);
  return kExitOk;
}

int analyze_profile(const RunGroups& groups, std::vector<double> taus, const fs::path& out_dir, std::ostream& out) {
  std::map<std::string, std::vector<double>> scores;
  for (const auto& [name, runs] : groups) {
    if (runs.size() < 2) throw UsageError("profile: group '" + name + "' has fewer than 2 runs");
    scores[name] = final_scores(runs);
  }
  if (taus.empty()) {
    double hi = 0.0;
    for (const auto& [name, s] : scores) hi = std::max(hi, *std::max_element(s.begin(), s.end()));
    for (int i = 0; i <= 20; ++i) taus.push_back(hi * i / 20.0);
  }
  std::sort(taus.begin(), taus.end());
  const auto prof = performance_profile(scores, taus);
  CsvTable t{kProfileCsvSchema, {"group", "tau", "fraction_above"}, {}};
  for (const auto& [name, fracs] : prof) {
    for (std::size_t k = 0; k < taus.size(); ++k) t.rows.push_back({name, str(taus[k]), str(fracs[k])});
  }
  write_csv(out_dir / "profile.csv", t, out);
  return kExitOk;
}

int analyze_saturation(const RunGroups& groups, double floor, const fs::path& out_dir, std::ostream& out) {
  CsvTable t{kSaturationCsvSchema,
             {"group", "seed", "saturated_fraction", "first_learning_step", "final_score", "stuck"},
             {}};
  for (const auto& [name, runs] : groups) {
    if (runs.size() < 2) throw UsageError("saturation: group '" + name + "' has fewer than 2 runs");
    int stuck = 0;
    for (const auto& r : runs) {
      const SaturationReport s = saturation_report(r, floor);
      stuck += s.stuck ? 1 : 0;
      t.rows.push_back({name, std::to_string(r.seed), str(s.saturated_fraction),
                        s.first_learning_step ? std::to_string(*s.first_learning_step) : "",
                        str(r.final_score()), s.stuck ? "1" : "0"});
    }
    out << name << ": " << stuck << " of " << runs.size() << " runs stuck (floor " << str(floor) << ")\n";
  }
  write_csv(out_dir / "saturation.csv", t, out);
  return kExitOk;
}

int analyze_sparse_q(const RunGroups& groups, const fs::path& out_dir, std::ostream& out) {
  CsvTable t{kSparseQCsvSchema, {"group", "seed", "step", "fnz_qtarget", "fnz_reward"}, {}};
  for (const auto& [name, runs] : groups) {
    if (runs.size() < 2) throw UsageError("sparse-q: group '" + name + "' has fewer than 2 runs");
    for (const auto& r : runs) {
      for (const auto& p : sparse_q_report(r)) {
        t.rows.push_back({name, std::to_string(r.seed), std::to_string(p.step), str(p.fnz_qtarget), str(p.fnz_reward)});
      }
    }
  }
  write_csv(out_dir / "sparse_q.csv", t, out);
  return kExitOk;
}

// Shortest text that reads back to the same double.
std::string shortest(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

void gain_row(CsvTable& t, const std::string& name, double alg, double sample, int s_from, int s_to, std::ostream& out) {
  const double ratio = eval_gain_ratio(alg, sample, s_from, s_to);
  out << name << ": sqrt((alg_var + sample_var / S_from) / (alg_var + sample_var / S_to))"
      << " with alg_var=" << shortest(alg) << " sample_var=" << shortest(sample) << " S_from=" << s_from
      << " S_to=" << s_to << " -> " << shortest(ratio) << "\n";
  char rounded[32];
  std::snprintf(rounded, sizeof rounded, "%.3f", ratio);
  out << "gain ratio: " << rounded << "\n";
  t.rows.push_back({name, str(alg), str(sample), std::to_string(s_from), std::to_string(s_to), str(ratio)});
}

int analyze_gain(const AnalyzeOptions& opts, const fs::path& out_dir, std::ostream& out) {
  if (opts.s_from < 1 || opts.s_to < 1) throw UsageError("gain-ratio: --s-from and --s-to must be >= 1");
  CsvTable t{kGainCsvSchema, {"group", "alg_var", "sample_var", "s_from", "s_to", "ratio"}, {}};
  if (opts.alg_var || opts.sample_var) {
    if (!opts.alg_var || !opts.sample_var) throw UsageError("gain-ratio: give both --alg-var and --sample-var");
    gain_row(t, "given", *opts.alg_var, *opts.sample_var, opts.s_from, opts.s_to, out);
  } else {
    for (const auto& [name, runs] : collect_runs(opts.run_dir)) {
      const auto m = last_point_matrix(runs);
      if (m.size() < 2) throw UsageError("gain-ratio: group '" + name + "' has fewer than 2 runs");
      const VarDecomp d = variance_decomposition(m);
      gain_row(t, name, d.alg_var, d.sample_var, opts.s_from, opts.s_to, out);
    }
  }
  write_csv(out_dir / "gain_ratio.csv", t, out);
  return kExitOk;
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitBadInput;
}

}  // namespace

int effective_workers(int requested) {
  if (const char* env = std::getenv("VARLAB_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1, requested);
}

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig cfg = load_experiment(opts.config_path);
    if (opts.preset) {
      check_preset(*opts.preset);
      cfg.preset = *opts.preset;
    }
    const AgentConfig agent = cfg.resolved_agent();
    agent.validate();
    const EnvSpec env = make_env(cfg.env);
    const fs::path dir = opts.out_dir ? fs::path(*opts.out_dir) : fs::path(cfg.output_dir);

    RngKeys keys = RngKeys::single(opts.seed);
    std::uint64_t file_key = opts.seed;
    if (opts.pair) {
      if (*opts.pair < 0) throw UsageError("--pair must be non-negative");
      if (opts.side != "A" && opts.side != "B") throw UsageError("--side must be A or B");
      const bool side_b = opts.side == "B";
      keys = pair_keys(opts.seed, *opts.pair, side_b);
      file_key = 2 * static_cast<std::uint64_t>(*opts.pair) + (side_b ? 1 : 0);
    }

    ActorNet actor;
    RunRecord rec = run_seed(agent, env, keys, cfg.run_settings(), config_hash(agent), &actor);
    rec.seed = file_key;
    if (opts.pair) {
      rec.pair_id = static_cast<std::uint64_t>(*opts.pair);
      rec.pair_side = opts.side;
    }
    write_run(dir, rec, cfg.stuck_floor);
    write_policy(policy_path(dir, file_key), actor);
    out << "run " << file_key << " on " << env.name << ": final score " << format_double(rec.final_score()) << "\n";
    if (rec.failed) {
      err << "run aborted: " << rec.failure << "\n";
      return kExitAborted;
    }
    return kExitOk;
  });
}

int cmd_bench(const BenchOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig cfg = load_experiment(opts.config_path);
    std::vector<std::string> presets = opts.presets;
    if (presets.empty()) presets.push_back(cfg.preset.empty() ? "baseline" : cfg.preset);
    for (const auto& p : presets) check_preset(p);
    std::vector<std::string> envs = opts.envs.empty() ? std::vector<std::string>{cfg.env} : opts.envs;
    for (const auto& e : envs) {
      try {
        (void)make_env(e);
      } catch (const std::invalid_argument& ex) {
        throw UsageError(ex.what());
      }
    }
    if (opts.seeds) {
      if (*opts.seeds < 1) throw UsageError("--seeds must be >= 1");
      cfg.seeds.clear();
      for (int s = 0; s < *opts.seeds; ++s) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    if (cfg.seeds.empty()) throw UsageError("no seeds to run");
    const int workers = effective_workers(opts.parallel);
    const fs::path dir = opts.out_dir ? fs::path(*opts.out_dir) : fs::path(cfg.output_dir);

    CsvTable t{kBenchCsvSchema, {"preset", "env", "metric", "value", "n_seeds"}, {}};
    bool any_failed = false;
    for (const auto& preset : presets) {
      const AgentConfig agent = apply_preset(preset, cfg.agent, cfg.preset_scale, cfg.total_steps);
      agent.validate();
      const std::string hash = config_hash(agent);
      for (const auto& env_name : envs) {
        const EnvSpec env = make_env(env_name);
        const auto runs = run_seeds(agent, env, cfg.seeds, cfg.run_settings(), workers, hash);
        for (const auto& r : runs) {
          write_run(dir / preset / env_name, r, cfg.stuck_floor);
          any_failed = any_failed || r.failed;
        }
        const SummaryStats s = summarize(runs);
        const std::string n = std::to_string(s.n);
        t.rows.push_back({preset, env_name, "mu", str(s.mean), n});
        t.rows.push_back({preset, env_name, "sigma", str(s.stddev), n});
        t.rows.push_back({preset, env_name, "rel", s.rel ? str(*s.rel) : "", n});
        out << preset << " on " << env_name << ": mu " << str(s.mean) << " sigma " << str(s.stddev) << "\n";
      }
    }
    std::sort(t.rows.begin(), t.rows.end(), [](const auto& a, const auto& b) {
      return std::tie(a[0], a[1], a[2]) < std::tie(b[0], b[1], b[2]);
    });
    write_csv(dir / "summary.csv", t, out);
    if (any_failed) err << "warning: some runs ended early on a non-finite value\n";
    return kExitOk;
  });
}

int cmd_analyze(const AnalyzeOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const fs::path out_dir = opts.out_dir ? fs::path(*opts.out_dir) : fs::path(opts.run_dir);
    if (opts.what == "gain-ratio") return analyze_gain(opts, out_dir, out);
    const RunGroups groups = collect_runs(opts.run_dir);
    if (groups.empty()) throw UsageError("no run records under '" + opts.run_dir + "'");
    if (opts.what == "decomp") return analyze_decomp(groups, out_dir, out);
    if (opts.what == "corr") return analyze_corr(groups, out_dir, out);
    if (opts.what == "profile") return analyze_profile(groups, opts.taus, out_dir, out);
    if (opts.what == "saturation") return analyze_saturation(groups, opts.stuck_floor, out_dir, out);
    if (opts.what == "sparse-q") return analyze_sparse_q(groups, out_dir, out);
    throw UsageError("unknown analysis '" + opts.what +
                     "'; valid: decomp, corr, profile, saturation, sparse-q, gain-ratio");
  });
}

int cmd_probe(const ProbeOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    for (double p : opts.p_grid) {
      if (!(p >= 0.0 && p <= 1.0)) throw UsageError("--p-grid values must lie in [0, 1]");
    }
    if (opts.episodes < 1) throw UsageError("--episodes must be >= 1");
    const ActorNet actor = read_policy(opts.policy_path);
    const EnvSpec env = make_env(opts.env);
    if (actor.trunk.input_dim() != env.state_dim || actor.head.output_dim() != env.action_dim) {
      throw UsageError("policy dimensions do not match env '" + env.name + "'");
    }
    const auto rows = random_action_probe(greedy_policy(actor), env, opts.p_grid, opts.episodes, opts.seed);
    CsvTable t{kProbeCsvSchema, {"p", "mean_return", "std_return"}, {}};
    for (const auto& r : rows) t.rows.push_back({str(r.p), str(r.mean_return), str(r.std_return)});
    write_csv(opts.out_path, t, out);
    return kExitOk;
  });
}

}  // namespace varlab::cli

#pragma once

// Multi-seed experiment harness plus the score statistics used to compare
// stabilization methods.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "varlab/agent.hpp"
#include "varlab/envworld.hpp"

namespace varlab {

struct RunSettings {
  std::int64_t total_steps = 50000;
  std::int64_t eval_every = 1000;
  int eval_episodes = 10;
  std::int64_t diag_every = 1000;  // window length for diagnostic averages
};

struct CurvePoint {
  std::int64_t step = 0;  // env steps completed
  double eval_mean = 0.0;
};

// Mean of the UpdateMetrics produced inside one diagnostic window.
struct DiagWindow {
  std::int64_t step = 0;  // env steps completed at the end of the window
  int updates = 0;
  UpdateMetrics mean;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::string env;
  std::string config_hash;
  bool failed = false;
  std::string failure;
  std::vector<CurvePoint> curve;
  std::vector<std::vector<double>> eval_scores;  // [eval point][episode]
  std::vector<DiagWindow> diag;
  // Set for paired-seed runs.
  std::optional<std::uint64_t> pair_id;
  std::string pair_side;

  // Mean over the episodes of the last eval point (0 when none were run).
  double final_score() const;
};

// Returns per-episode undiscounted returns; episode e starts from
// env_reset(spec, derive_seed(seed, e)).
std::vector<double> evaluate_policy(const EnvSpec& spec, const Policy& policy, int episodes, std::uint64_t seed);

Policy greedy_policy(const ActorNet& actor);

// Trains one agent and evaluates it every eval_every steps. A non-finite
// loss ends the run early and marks the record failed. When trained_actor
// is given it receives the final actor.
RunRecord run_seed(const AgentConfig& cfg, const EnvSpec& env, const RngKeys& keys, const RunSettings& settings,
                   const std::string& config_hash = "", ActorNet* trained_actor = nullptr);
RunRecord run_seed(const AgentConfig& cfg, const EnvSpec& env, std::uint64_t seed, const RunSettings& settings,
                   const std::string& config_hash = "", ActorNet* trained_actor = nullptr);

// Runs every seed on up to `workers` threads; the result is sorted by seed.
std::vector<RunRecord> run_seeds(const AgentConfig& cfg, const EnvSpec& env, const std::vector<std::uint64_t>& seeds,
                                 const RunSettings& settings, int workers, const std::string& config_hash = "");

struct SummaryStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample std, N - 1 denominator
  std::optional<double> rel;  // stddev / mean, only when mean > 0
  std::size_t n = 0;
};

SummaryStats summarize_scores(const std::vector<double>& scores);
// Scores at the eval point with the given step (last point when absent).
SummaryStats summarize(const std::vector<RunRecord>& records, std::optional<std::int64_t> at_step = std::nullopt);

// Undefined (nullopt) when either vector has zero variance.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);

struct CorrelationReport {
  std::vector<std::int64_t> steps;
  std::vector<std::optional<double>> per_point;
  double time_averaged = 0.0;
  int excluded = 0;  // points with undefined correlation
  int failed_runs = 0;
  std::vector<RunRecord> runs_a;
  std::vector<RunRecord> runs_b;
};

// Pearson correlation across pairs at each eval point. The two runs of a pair
// share initialization and seed-phase experience; with share_all they share
// every random stream.
CorrelationReport correlation_from_runs(const std::vector<RunRecord>& a, const std::vector<RunRecord>& b);
CorrelationReport paired_seed_correlation(const AgentConfig& cfg, const EnvSpec& env, int n_pairs,
                                          const RunSettings& settings, std::uint64_t master_seed, int workers = 1,
                                          bool share_all = false);
RngKeys pair_keys(std::uint64_t master_seed, int pair, bool side_b, bool share_all = false);

struct ProbeRow {
  double p = 0.0;
  double mean_return = 0.0;
  double std_return = 0.0;
};

// With probability p each step the policy's action is replaced by a uniform
// random action. Random draws are made every step regardless of p or policy.
std::vector<ProbeRow> random_action_probe(const Policy& policy, const EnvSpec& env, const std::vector<double>& p_grid,
                                          int episodes, std::uint64_t seed);

struct VarDecomp {
  double alg_var = 0.0;      // floored at 0
  double alg_var_raw = 0.0;  // before flooring
  double sample_var = 0.0;
  std::size_t runs = 0;
  std::size_t samples = 0;

  // alg_var_raw / R + sample_var / (R S): unbiased variance of the grand mean.
  double perf_variance() const;
};

// scores is [runs x samples]; requires at least 2 x 2.
VarDecomp variance_decomposition(const std::vector<std::vector<double>>& scores);

// sqrt((alg + sample / s_from) / (alg + sample / s_to)).
double eval_gain_ratio(double alg_var, double sample_var, int s_from, int s_to);
double eval_gain_ratio(const VarDecomp& decomp, int s_from, int s_to);

// Fraction of scores strictly above each tau, per method.
std::map<std::string, std::vector<double>> performance_profile(
    const std::map<std::string, std::vector<double>>& final_scores, const std::vector<double>& taus);

struct SaturationReport {
  double saturated_fraction = 0.0;  // windows with updates whose avg |a| > 0.95
  std::optional<std::int64_t> first_learning_step;  // first eval point above the floor
  bool stuck = false;
};

inline constexpr double kStuckFraction = 0.9;

SaturationReport saturation_report(const RunRecord& record, double score_floor);

struct SparseQPoint {
  std::int64_t step = 0;
  double fnz_qtarget = 0.0;
  double fnz_reward = 0.0;
};
std::vector<SparseQPoint> sparse_q_report(const RunRecord& record);

struct LrSweepRow {
  double lr = 0.0;
  SummaryStats stats;
  std::vector<RunRecord> runs;
};
std::vector<LrSweepRow> lr_sweep(const AgentConfig& cfg, const EnvSpec& env, const std::vector<double>& lrs,
                                 const std::vector<std::uint64_t>& seeds, const RunSettings& settings, int workers);

}  // namespace varlab

#include "varlab/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace varlab {

namespace {

void accumulate(UpdateMetrics& acc, const UpdateMetrics& m) {
  acc.actor_grad_norm += m.actor_grad_norm;
  acc.critic_loss += m.critic_loss;
  acc.actor_loss += m.actor_loss;
  acc.avg_abs_action += m.avg_abs_action;
  acc.avg_q += m.avg_q;
  acc.delta_q += m.delta_q;
  acc.fnz_qtarget += m.fnz_qtarget;
  acc.fnz_reward += m.fnz_reward;
  acc.ssl_loss += m.ssl_loss;
  acc.pnorm_clamped += m.pnorm_clamped;
}

UpdateMetrics averaged(UpdateMetrics acc, int count) {
  if (count == 0) return acc;
  const double k = static_cast<double>(count);
  acc.actor_grad_norm /= k;
  acc.critic_loss /= k;
  acc.actor_loss /= k;
  acc.avg_abs_action /= k;
  acc.avg_q /= k;
  acc.delta_q /= k;
  acc.fnz_qtarget /= k;
  acc.fnz_reward /= k;
  acc.ssl_loss /= k;
  return acc;  // pnorm_clamped stays a window total
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Unbiased (N - 1) variance, two-pass.
double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

template <typename Job>
void parallel_for(std::size_t n, int workers, const Job& job) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(w, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) job(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

double RunRecord::final_score() const {
  if (eval_scores.empty()) return 0.0;
  return mean_of(eval_scores.back());
}

std::vector<double> evaluate_policy(const EnvSpec& spec, const Policy& policy, int episodes, std::uint64_t seed) {
  std::vector<double> returns;
  returns.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    returns.push_back(rollout(spec, policy, derive_seed(seed, static_cast<std::uint64_t>(e))).total_reward);
  }
  return returns;
}

Policy greedy_policy(const ActorNet& actor) {
  return [&actor](const RealVec& obs) -> RealVec {
    Rng unused(0);
    return select_action(actor, obs, 0.0, ActionMode::kEval, unused);
  };
}

RunRecord run_seed(const AgentConfig& cfg, const EnvSpec& env, const RngKeys& keys, const RunSettings& settings,
                   const std::string& config_hash, ActorNet* trained_actor) {
  if (settings.total_steps < cfg.seed_frames) throw std::invalid_argument("run_seed: total_steps < seed_frames");
  if (settings.eval_every <= 0 || settings.diag_every <= 0 || settings.eval_episodes <= 0) {
    throw std::invalid_argument("run_seed: eval_every, diag_every and eval_episodes must be positive");
  }
  RunRecord rec;
  rec.seed = keys.run;
  rec.env = env.name;
  rec.config_hash = config_hash;

  Agent agent(cfg, env, keys);
  UpdateMetrics window_acc;
  int window_updates = 0;
  std::int64_t eval_point = 0;
  try {
    for (std::int64_t step = 0; step < settings.total_steps; ++step) {
      if (auto m = agent.step(step)) {
        accumulate(window_acc, *m);
        ++window_updates;
      }
      const std::int64_t done = step + 1;
      if (done % settings.diag_every == 0) {
        rec.diag.push_back({done, window_updates, averaged(window_acc, window_updates)});
        window_acc = UpdateMetrics{};
        window_updates = 0;
      }
      if (done % settings.eval_every == 0) {
        const std::uint64_t eval_seed = derive_seed(keys.run, 0xe7a1000000ULL + static_cast<std::uint64_t>(eval_point++));
        std::vector<double> scores = evaluate_policy(env, greedy_policy(agent.actor()), settings.eval_episodes, eval_seed);
        rec.curve.push_back({done, mean_of(scores)});
        rec.eval_scores.push_back(std::move(scores));
      }
    }
  } catch (const NumericError& e) {
    rec.failed = true;
    rec.failure = e.what();
  }
  if (trained_actor) *trained_actor = agent.actor();
  return rec;
}

RunRecord run_seed(const AgentConfig& cfg, const EnvSpec& env, std::uint64_t seed, const RunSettings& settings,
                   const std::string& config_hash, ActorNet* trained_actor) {
  return run_seed(cfg, env, RngKeys::single(seed), settings, config_hash, trained_actor);
}

std::vector<RunRecord> run_seeds(const AgentConfig& cfg, const EnvSpec& env, const std::vector<std::uint64_t>& seeds,
                                 const RunSettings& settings, int workers, const std::string& config_hash) {
  std::vector<RunRecord> out(seeds.size());
  parallel_for(seeds.size(), workers, [&](std::size_t i) { out[i] = run_seed(cfg, env, seeds[i], settings, config_hash); });
  std::stable_sort(out.begin(), out.end(), [](const RunRecord& a, const RunRecord& b) { return a.seed < b.seed; });
  return out;
}

SummaryStats summarize_scores(const std::vector<double>& scores) {
  SummaryStats s;
  s.n = scores.size();
  s.mean = mean_of(scores);
  s.stddev = std::sqrt(sample_variance(scores));
  if (s.mean > 0.0) s.rel = s.stddev / s.mean;
  return s;
}

SummaryStats summarize(const std::vector<RunRecord>& records, std::optional<std::int64_t> at_step) {
  if (records.size() < 2) throw std::invalid_argument("summarize: need at least two records");
  std::vector<double> scores;
  for (const RunRecord& r : records) {
    if (!at_step) {
      scores.push_back(r.final_score());
      continue;
    }
    double value = 0.0;
    bool found = false;
    for (std::size_t k = 0; k < r.curve.size(); ++k) {
      if (r.curve[k].step == *at_step) {
        value = r.curve[k].eval_mean;
        found = true;
      }
    }
    if (!found && !r.failed) throw std::invalid_argument("summarize: record has no eval point at the requested step");
    if (!found) value = r.final_score();
    scores.push_back(value);
  }
  return summarize_scores(scores);
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 2) return std::nullopt;
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

RngKeys pair_keys(std::uint64_t master_seed, int pair, bool side_b, bool share_all) {
  const auto p = static_cast<std::uint64_t>(pair);
  RngKeys k;
  k.shared = derive_seed(master_seed, 0x5a00000000ULL + p);
  k.run = share_all ? derive_seed(master_seed, 0x5b00000000ULL + 2 * p)
                    : derive_seed(master_seed, 0x5b00000000ULL + 2 * p + (side_b ? 1 : 0));
  return k;
}

CorrelationReport correlation_from_runs(const std::vector<RunRecord>& a, const std::vector<RunRecord>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("correlation: unequal numbers of runs");
  if (a.size() < 3) throw std::invalid_argument("correlation: need at least three pairs");
  CorrelationReport rep;
  std::size_t points = std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < a.size(); ++i) {
    points = std::min({points, a[i].curve.size(), b[i].curve.size()});
    rep.failed_runs += int(a[i].failed) + int(b[i].failed);
  }
  double sum = 0.0;
  int defined = 0;
  for (std::size_t k = 0; k < points; ++k) {
    std::vector<double> xa;
    std::vector<double> xb;
    for (std::size_t i = 0; i < a.size(); ++i) {
      xa.push_back(a[i].curve[k].eval_mean);
      xb.push_back(b[i].curve[k].eval_mean);
    }
    rep.steps.push_back(a.front().curve[k].step);
    const auto rho = pearson(xa, xb);
    rep.per_point.push_back(rho);
    if (rho) {
      sum += *rho;
      ++defined;
    } else {
      ++rep.excluded;
    }
  }
  rep.time_averaged = defined > 0 ? sum / defined : 0.0;
  rep.runs_a = a;
  rep.runs_b = b;
  return rep;
}

CorrelationReport paired_seed_correlation(const AgentConfig& cfg, const EnvSpec& env, int n_pairs,
                                          const RunSettings& settings, std::uint64_t master_seed, int workers,
                                          bool share_all) {
  if (n_pairs < 3) throw std::invalid_argument("paired_seed_correlation: need at least three pairs");
  const auto n = static_cast<std::size_t>(n_pairs);
  std::vector<RunRecord> runs(2 * n);
  parallel_for(2 * n, workers, [&](std::size_t i) {
    const int pair = static_cast<int>(i / 2);
    const bool side_b = (i % 2) == 1;
    runs[i] = run_seed(cfg, env, pair_keys(master_seed, pair, side_b, share_all), settings);
    runs[i].pair_id = static_cast<std::uint64_t>(pair);
    runs[i].pair_side = side_b ? "B" : "A";
  });
  std::vector<RunRecord> a;
  std::vector<RunRecord> b;
  for (std::size_t i = 0; i < 2 * n; ++i) (i % 2 == 0 ? a : b).push_back(std::move(runs[i]));
  return correlation_from_runs(a, b);
}

std::vector<ProbeRow> random_action_probe(const Policy& policy, const EnvSpec& env, const std::vector<double>& p_grid,
                                          int episodes, std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("random_action_probe: episodes must be >= 1");
  std::vector<ProbeRow> rows;
  for (double p : p_grid) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("random_action_probe: p outside [0, 1]");
    std::vector<double> returns;
    for (int e = 0; e < episodes; ++e) {
      const auto ep = static_cast<std::uint64_t>(e);
      Rng swap_rng = make_rng(seed, 0x9b0be00000ULL + ep);
      const Policy mixed = [&](const RealVec& obs) -> RealVec {
        const double u = uniform(swap_rng);
        RealVec random(env.action_dim);
        for (Eigen::Index i = 0; i < random.size(); ++i) random(i) = uniform(swap_rng, -1.0, 1.0);
        if (u < p) return random;
        return policy(obs);
      };
      returns.push_back(rollout(env, mixed, derive_seed(seed, ep)).total_reward);
    }
    rows.push_back({p, mean_of(returns), std::sqrt(sample_variance(returns))});
  }
  return rows;
}

double VarDecomp::perf_variance() const {
  const auto r = static_cast<double>(runs);
  const auto s = static_cast<double>(samples);
  return alg_var_raw / r + sample_var / (r * s);
}

VarDecomp variance_decomposition(const std::vector<std::vector<double>>& scores) {
  if (scores.size() < 2) throw std::invalid_argument("variance_decomposition: need at least two runs");
  const std::size_t s = scores.front().size();
  if (s < 2) throw std::invalid_argument("variance_decomposition: need at least two samples per run");
  VarDecomp d;
  d.runs = scores.size();
  d.samples = s;
  std::vector<double> run_means;
  double within = 0.0;
  for (const auto& row : scores) {
    if (row.size() != s) throw std::invalid_argument("variance_decomposition: ragged score matrix");
    run_means.push_back(mean_of(row));
    within += sample_variance(row);
  }
  d.sample_var = within / static_cast<double>(d.runs);
  d.alg_var_raw = sample_variance(run_means) - d.sample_var / static_cast<double>(s);
  d.alg_var = std::max(0.0, d.alg_var_raw);
  return d;
}

double eval_gain_ratio(double alg_var, double sample_var, int s_from, int s_to) {
  if (s_from < 1 || s_to < 1) throw std::invalid_argument("eval_gain_ratio: sample counts must be >= 1");
  if (s_from == s_to) return 1.0;
  const double num = alg_var + sample_var / s_from;
  const double den = alg_var + sample_var / s_to;
  if (den == 0.0) throw std::domain_error("eval_gain_ratio: zero denominator");
  return std::sqrt(num / den);
}

double eval_gain_ratio(const VarDecomp& decomp, int s_from, int s_to) {
  return eval_gain_ratio(decomp.alg_var, decomp.sample_var, s_from, s_to);
}

std::map<std::string, std::vector<double>> performance_profile(
    const std::map<std::string, std::vector<double>>& final_scores, const std::vector<double>& taus) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [method, scores] : final_scores) {
    if (scores.empty()) throw std::invalid_argument("performance_profile: method '" + method + "' has no scores");
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> fractions;
    for (double tau : taus) {
      const auto above = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), tau);
      fractions.push_back(static_cast<double>(above) / static_cast<double>(sorted.size()));
    }
    out.emplace(method, std::move(fractions));
  }
  return out;
}

SaturationReport saturation_report(const RunRecord& record, double score_floor) {
  SaturationReport rep;
  int windows = 0;
  int saturated = 0;
  for (const DiagWindow& w : record.diag) {
    if (w.updates == 0) continue;
    ++windows;
    if (w.mean.avg_abs_action > kSaturatedAction) ++saturated;
  }
  rep.saturated_fraction = windows > 0 ? static_cast<double>(saturated) / windows : 0.0;
  for (const CurvePoint& p : record.curve) {
    if (p.eval_mean > score_floor) {
      rep.first_learning_step = p.step;
      break;
    }
  }
  rep.stuck = windows > 0 && rep.saturated_fraction >= kStuckFraction && record.final_score() < score_floor;
  return rep;
}

std::vector<SparseQPoint> sparse_q_report(const RunRecord& record) {
  std::vector<SparseQPoint> out;
  for (const DiagWindow& w : record.diag) {
    if (w.updates == 0) continue;
    out.push_back({w.step, w.mean.fnz_qtarget, w.mean.fnz_reward});
  }
  return out;
}

std::vector<LrSweepRow> lr_sweep(const AgentConfig& cfg, const EnvSpec& env, const std::vector<double>& lrs,
                                 const std::vector<std::uint64_t>& seeds, const RunSettings& settings, int workers) {
  std::vector<LrSweepRow> rows;
  for (double lr : lrs) {
    AgentConfig c = cfg;
    c.lr = lr;
    LrSweepRow row;
    row.lr = lr;
    row.runs = run_seeds(c, env, seeds, settings, workers);
    std::vector<double> finals;
    for (const RunRecord& r : row.runs) finals.push_back(r.final_score());
    row.stats = summarize_scores(finals);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace varlab

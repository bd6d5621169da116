#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "varlab/bench.hpp"

using namespace varlab;

namespace {

AgentConfig tiny_config() {
  AgentConfig c;
  c.feature_dim = 6;
  c.hidden_dim = 12;
  c.ssl_hidden = 12;
  c.batch = 16;
  c.seed_frames = 64;
  c.replay_capacity = 5000;
  c.noise_sched.duration = 500;
  return c;
}

RunSettings tiny_settings() {
  RunSettings s;
  s.total_steps = 300;
  s.eval_every = 100;
  s.eval_episodes = 2;
  s.diag_every = 50;
  return s;
}

std::vector<double> normals(Rng& rng, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = standard_normal(rng);
  return v;
}

RunRecord record_with_actions(const std::vector<double>& avg_abs, double final_score) {
  RunRecord r;
  std::int64_t step = 0;
  for (double a : avg_abs) {
    DiagWindow w;
    w.step = (step += 100);
    w.updates = 50;
    w.mean.avg_abs_action = a;
    r.diag.push_back(w);
  }
  r.curve.push_back({step, final_score});
  r.eval_scores.push_back({final_score});
  return r;
}

bool same_records(const RunRecord& a, const RunRecord& b) {
  if (a.curve.size() != b.curve.size() || a.diag.size() != b.diag.size()) return false;
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    if (a.curve[i].step != b.curve[i].step || a.curve[i].eval_mean != b.curve[i].eval_mean) return false;
  }
  for (std::size_t i = 0; i < a.diag.size(); ++i) {
    if (a.diag[i].mean.critic_loss != b.diag[i].mean.critic_loss) return false;
    if (a.diag[i].mean.actor_grad_norm != b.diag[i].mean.actor_grad_norm) return false;
  }
  return a.eval_scores == b.eval_scores;
}

}  // namespace

TEST_CASE("summary statistics") {
  // Two points mu +/- d have sample std d * sqrt(2).
  const double mu = 769.66;
  const double sigma = 371.48;
  const double d = sigma / std::sqrt(2.0);
  const SummaryStats s = summarize_scores({mu - d, mu + d});
  CHECK(s.mean == doctest::Approx(mu).epsilon(1e-12));
  CHECK(s.stddev == doctest::Approx(sigma).epsilon(1e-12));
  REQUIRE(s.rel.has_value());
  CHECK(*s.rel == doctest::Approx(0.48).epsilon(0.01));

  const SummaryStats same = summarize_scores({3.0, 3.0, 3.0});
  CHECK(same.stddev == 0.0);
  CHECK(*same.rel == 0.0);
  CHECK_FALSE(summarize_scores({-1.0, 1.0}).rel.has_value());
  CHECK_FALSE(summarize_scores({0.0, 0.0}).rel.has_value());

  Rng rng = make_rng(1, 1);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> v = normals(rng, 20);
    for (double& x : v) x = 1e3 + 10 * x;
    const SummaryStats t = summarize_scores(v);
    CHECK(std::abs(t.mean - oracle::mean(v)) < 1e-12 * 1e3);
    CHECK(std::abs(t.stddev * t.stddev - oracle::variance(v)) < 1e-12 * oracle::variance(v));
  }

  std::vector<RunRecord> one(1);
  CHECK_THROWS_AS(summarize(one), std::invalid_argument);
}

TEST_CASE("pearson") {
  Rng rng = make_rng(2, 1);
  const std::vector<double> x = normals(rng, 10);
  const std::vector<double> y = normals(rng, 10);
  CHECK(std::abs(*pearson(x, y) - oracle::pearson(x, y)) < 1e-12);
  CHECK(*pearson(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> neg(x.size());
  std::transform(x.begin(), x.end(), neg.begin(), [](double v) { return 7.0 - v; });
  CHECK(*pearson(x, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  std::vector<double> affine(y.size());
  std::transform(y.begin(), y.end(), affine.begin(), [](double v) { return 3.5 * v - 2.0; });
  CHECK(*pearson(x, affine) == doctest::Approx(*pearson(x, y)).epsilon(1e-12));
  CHECK_FALSE(pearson(x, std::vector<double>(10, 1.0)).has_value());
  for (int k = 0; k < 200; ++k) {
    const double r = *pearson(normals(rng, 4), normals(rng, 4));
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
  }
}

TEST_CASE("correlation across pairs") {
  auto rec = [](std::vector<double> curve) {
    RunRecord r;
    for (std::size_t i = 0; i < curve.size(); ++i) r.curve.push_back({static_cast<std::int64_t>(100 * (i + 1)), curve[i]});
    return r;
  };
  const std::vector<RunRecord> a{rec({1, 5, 2}), rec({2, 5, 4}), rec({3, 5, 9})};
  const std::vector<RunRecord> b{rec({-1, 1, 2}), rec({-2, 2, 4}), rec({-3, 3, 9})};
  const CorrelationReport rep = correlation_from_runs(a, b);
  REQUIRE(rep.per_point.size() == 3);
  CHECK(*rep.per_point[0] == doctest::Approx(-1.0));
  CHECK_FALSE(rep.per_point[1].has_value());
  CHECK(*rep.per_point[2] == doctest::Approx(1.0));
  CHECK(rep.excluded == 1);
  CHECK(rep.time_averaged == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("paired runs with every stream shared correlate perfectly") {
  AgentConfig cfg = tiny_config();
  const RunSettings s = tiny_settings();
  const CorrelationReport rep = paired_seed_correlation(cfg, make_env("pendulum_swingup"), 3, s, 11, 1, true);
  for (std::size_t i = 0; i < rep.runs_a.size(); ++i) CHECK(same_records(rep.runs_a[i], rep.runs_b[i]));
  for (const auto& rho : rep.per_point) {
    if (rho) CHECK(*rho == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(paired_seed_correlation(cfg, make_env("pendulum_swingup"), 2, s, 11), std::invalid_argument);

  // Default pairing shares init and seed-phase streams only.
  const RngKeys ka = pair_keys(11, 0, false);
  const RngKeys kb = pair_keys(11, 0, true);
  CHECK(ka.shared == kb.shared);
  CHECK(ka.run != kb.run);
  CHECK(pair_keys(11, 1, false).shared != ka.shared);
}

TEST_CASE("variance decomposition examples") {
  const VarDecomp flat = variance_decomposition({{2, 2, 2}, {2, 2, 2}});
  CHECK(flat.alg_var == 0.0);
  CHECK(flat.sample_var == 0.0);
  const VarDecomp rows = variance_decomposition({{1, 1}, {3, 3}, {8, 8}});
  CHECK(rows.sample_var == 0.0);
  CHECK(rows.alg_var == doctest::Approx(oracle::variance({1, 3, 8})).epsilon(1e-14));
  CHECK_THROWS_AS(variance_decomposition({{1, 2}}), std::invalid_argument);
  CHECK_THROWS_AS(variance_decomposition({{1}, {2}}), std::invalid_argument);
  // Noise-dominated data floors the algorithm variance at zero.
  const VarDecomp noisy = variance_decomposition({{0, 10}, {10, 0}});
  CHECK(noisy.alg_var_raw < 0.0);
  CHECK(noisy.alg_var == 0.0);
}

TEST_CASE("reconstruction identity on random matrices") {
  Rng rng = make_rng(3, 1);
  for (int k = 0; k < 1000; ++k) {
    const int r = 2 + static_cast<int>(rng() % 8);
    const int s = 2 + static_cast<int>(rng() % 8);
    std::vector<std::vector<double>> m(static_cast<std::size_t>(r));
    std::vector<double> row_means;
    for (auto& row : m) {
      row = normals(rng, s);
      const double shift = 5.0 * standard_normal(rng);
      for (double& x : row) x = 100.0 + shift + 3.0 * x;
      row_means.push_back(oracle::mean(row));
    }
    const VarDecomp d = variance_decomposition(m);
    const double want = oracle::variance(row_means) / r;
    CHECK(std::abs(d.perf_variance() - want) <= 1e-9 * std::max(1.0, want));
  }
}

TEST_CASE("decomposition matches a Monte-Carlo resimulation") {
  const int r = 5;
  const int s = 4;
  const double sd_alg = 2.0;
  const double sd_sample = 3.0;
  const int sims = 1000000;
  Rng rng = make_rng(4, 1);
  std::vector<std::vector<double>> m(r, std::vector<double>(s));
  double sum_mean = 0.0;
  double sum_mean2 = 0.0;
  double sum_est = 0.0;
  double sum_est2 = 0.0;
  for (int k = 0; k < sims; ++k) {
    double grand = 0.0;
    for (auto& row : m) {
      const double a = sd_alg * standard_normal(rng);
      for (double& x : row) {
        x = 10.0 + a + sd_sample * standard_normal(rng);
        grand += x;
      }
    }
    grand /= r * s;
    sum_mean += grand;
    sum_mean2 += grand * grand;
    const double est = variance_decomposition(m).perf_variance();
    sum_est += est;
    sum_est2 += est * est;
  }
  const double n = sims;
  const double mc_var = (sum_mean2 - sum_mean * sum_mean / n) / (n - 1);
  const double est_mean = sum_est / n;
  const double est_sd = std::sqrt((sum_est2 - sum_est * sum_est / n) / (n - 1));
  const double se = std::hypot(est_sd / std::sqrt(n), mc_var * std::sqrt(2.0 / (n - 1)));
  const double truth = sd_alg * sd_alg / r + sd_sample * sd_sample / (r * s);
  CHECK(std::abs(est_mean - mc_var) < 3.0 * se);
  CHECK(std::abs(mc_var - truth) < 5.0 * mc_var * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("eval gain ratio") {
  const double g = eval_gain_ratio(35231.7, 176211.9, 10, 100);
  CHECK(std::abs(g - 1.195) <= 0.001);
  CHECK(g <= 1.2);
  CHECK(eval_gain_ratio(5.0, 0.0, 10, 100) == 1.0);
  CHECK(eval_gain_ratio(5.0, 7.0, 10, 10) == 1.0);
  CHECK_THROWS_AS(eval_gain_ratio(0.0, 0.0, 10, 100), std::domain_error);
  CHECK_THROWS_AS(eval_gain_ratio(1.0, 1.0, 0, 100), std::invalid_argument);
  VarDecomp d;
  d.alg_var = 35231.7;
  d.sample_var = 176211.9;
  CHECK(eval_gain_ratio(d, 10, 100) == g);
}

TEST_CASE("performance profile") {
  const auto p = performance_profile({{"m", {1, 2, 3}}}, {0.5, 2.0, 3.0, 9.0});
  const auto& v = p.at("m");
  CHECK(v[0] == 1.0);
  CHECK(v[1] == doctest::Approx(1.0 / 3.0));
  CHECK(v[2] == 0.0);
  CHECK(v[3] == 0.0);

  Rng rng = make_rng(5, 1);
  std::vector<double> taus;
  for (int i = -30; i <= 30; ++i) taus.push_back(i * 0.1);
  for (int k = 0; k < 50; ++k) {
    const int n = 1 + static_cast<int>(rng() % 12);
    std::vector<double> scores = normals(rng, n);
    for (double& x : scores) x = std::round(x * 10.0) / 10.0;  // force ties on grid points
    const auto prof = performance_profile({{"a", scores}}, taus).at("a");
    for (std::size_t t = 0; t < taus.size(); ++t) {
      const auto count = std::count_if(scores.begin(), scores.end(), [&](double x) { return x > taus[t]; });
      CHECK(prof[t] == static_cast<double>(count) / n);
      const double scaled = prof[t] * n;
      CHECK(scaled == std::round(scaled));
      if (t > 0) CHECK(prof[t] <= prof[t - 1]);
    }
  }
}

TEST_CASE("saturation report") {
  const SaturationReport full = saturation_report(record_with_actions({1.0, 1.0, 1.0}, 0.0), 20.0);
  CHECK(full.saturated_fraction == 1.0);
  CHECK(full.stuck);
  CHECK_FALSE(full.first_learning_step.has_value());
  CHECK_FALSE(saturation_report(record_with_actions({1.0, 1.0}, 50.0), 20.0).stuck);
  const SaturationReport calm = saturation_report(record_with_actions({0.3, 0.3}, 0.0), 20.0);
  CHECK(calm.saturated_fraction == 0.0);
  CHECK_FALSE(calm.stuck);

  Rng rng = make_rng(6, 1);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> acts;
    for (int i = 0; i < 20; ++i) acts.push_back(uniform(rng, 0.8, 1.0));
    const double want = static_cast<double>(std::count_if(acts.begin(), acts.end(), [](double a) { return a > 0.95; })) / 20.0;
    CHECK(saturation_report(record_with_actions(acts, 0.0), 20.0).saturated_fraction == want);
  }

  RunRecord learned = record_with_actions({0.5}, 30.0);
  learned.curve.insert(learned.curve.begin(), {{50, 10.0}, {70, 25.0}});
  CHECK(*saturation_report(learned, 20.0).first_learning_step == 70);
}

TEST_CASE("runs: curve length, determinism and sparse-q extraction") {
  const AgentConfig cfg = tiny_config();
  const RunSettings s = tiny_settings();
  const EnvSpec dense = make_env("pendulum_swingup");
  const RunRecord a = run_seed(cfg, dense, 4, s);
  const RunRecord b = run_seed(cfg, dense, 4, s);
  CHECK(same_records(a, b));
  CHECK(a.curve.size() == 3);
  CHECK(a.diag.size() == 6);
  CHECK(a.final_score() == doctest::Approx(oracle::mean(a.eval_scores.back())).epsilon(1e-15));
  CHECK_FALSE(same_records(a, run_seed(cfg, dense, 5, s)));

  for (const auto& p : sparse_q_report(a)) {
    if (p.step <= cfg.seed_frames) continue;
    CHECK(p.fnz_reward > 0.99);
  }

  const RunRecord sparse = run_seed(cfg, make_env("pendulum_swingup_sparse"), 4, s);
  const auto series = sparse_q_report(sparse);
  std::vector<DiagWindow> active;
  for (const DiagWindow& w : sparse.diag) {
    if (w.updates > 0) active.push_back(w);
  }
  REQUIRE(series.size() == active.size());
  CHECK(series.size() + 1 == sparse.diag.size());  // the seed phase window has no updates
  for (std::size_t i = 0; i < series.size(); ++i) {
    CHECK(series[i].step == active[i].step);
    CHECK(series[i].fnz_reward == active[i].mean.fnz_reward);
    CHECK(series[i].fnz_qtarget == active[i].mean.fnz_qtarget);
    CHECK(series[i].fnz_qtarget >= 0.0);
    CHECK(series[i].fnz_qtarget <= 1.0);
  }
}

TEST_CASE("parallel seeds match serial seeds bit-exactly") {
  const AgentConfig cfg = tiny_config();
  const RunSettings s = tiny_settings();
  const EnvSpec env = make_env("reacher");
  const std::vector<std::uint64_t> seeds{3, 0, 2, 1};
  const auto serial = run_seeds(cfg, env, seeds, s, 1);
  const auto parallel = run_seeds(cfg, env, seeds, s, 4);
  REQUIRE(serial.size() == 4);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].seed == i);
    CHECK(same_records(serial[i], parallel[i]));
  }
}

TEST_CASE("random action probe endpoints") {
  const EnvSpec env = make_env("pendulum_swingup");
  Rng rng = make_rng(7, 1);
  const AgentConfig cfg = tiny_config();
  const ActorNet one = make_actor(cfg, env.state_dim, env.action_dim, rng);
  const ActorNet two = make_actor(cfg, env.state_dim, env.action_dim, rng);
  const auto r1 = random_action_probe(greedy_policy(one), env, {0.0, 1.0}, 4, 9);
  const auto r2 = random_action_probe(greedy_policy(two), env, {0.0, 1.0}, 4, 9);
  const auto plain = evaluate_policy(env, greedy_policy(one), 4, 9);
  CHECK(r1[0].mean_return == oracle::mean(plain));
  CHECK(r1[1].mean_return == r2[1].mean_return);
  CHECK(r1[1].std_return == r2[1].std_return);
  CHECK_THROWS_AS(random_action_probe(greedy_policy(one), env, {1.5}, 4, 9), std::invalid_argument);

  // An energy-pumping swing-up controller beats random actions.
  const Policy balance = [](const RealVec& o) {
    const double c = o(0);
    const double w = 8.0 * o(2);
    const double theta = std::atan2(o(1), c);
    const double energy = 0.5 * w * w + 10.0 * c;
    RealVec a(1);
    if (c > 0.9) {
      a(0) = std::clamp(-(8.0 * theta + 2.0 * w), -1.0, 1.0);
    } else if (energy < 10.0) {
      a(0) = w >= 0.0 ? 1.0 : -1.0;
    } else {
      a(0) = w >= 0.0 ? -0.3 : 0.3;
    }
    return a;
  };
  const auto rows = random_action_probe(balance, env, {0.0, 1.0}, 4, 9);
  CHECK(rows[0].mean_return > rows[1].mean_return);
}

TEST_CASE("lr sweep") {
  AgentConfig cfg = tiny_config();
  const RunSettings s = tiny_settings();
  const EnvSpec env = make_env("pendulum_swingup");
  const auto rows = lr_sweep(cfg, env, {0.0, 1e-4}, {0, 1}, s, 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].lr == 0.0);
  AgentConfig at = cfg;
  at.lr = 1e-4;
  const auto direct = run_seeds(at, env, {0, 1}, s, 1);
  CHECK(rows[1].stats.mean == summarize(direct).mean);
  // lr 0: the greedy policy never changes, so each run's curve is the same
  // policy evaluated on fresh episodes.
  for (const RunRecord& r : rows[0].runs) {
    for (std::size_t k = 1; k < r.diag.size(); ++k) CHECK(r.diag[k].mean.critic_loss >= 0.0);
  }
}

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "commands.hpp"
#include "varlab/bench.hpp"
#include "varlab/config.hpp"
#include "varlab/diffmath.hpp"
#include "varlab/envworld.hpp"
#include "varlab/records_io.hpp"

namespace py = pybind11;
using namespace varlab;

namespace {

py::dict record_dict(const RunRecord& r) {
  py::list curve;
  for (const auto& p : r.curve) curve.append(py::make_tuple(p.step, p.eval_mean));
  py::list diag;
  for (const auto& w : r.diag) {
    py::dict d;
    d["step"] = w.step;
    d["updates"] = w.updates;
    d["avg_abs_action"] = w.mean.avg_abs_action;
    d["critic_loss"] = w.mean.critic_loss;
    d["actor_loss"] = w.mean.actor_loss;
    d["actor_grad_norm"] = w.mean.actor_grad_norm;
    d["avg_q"] = w.mean.avg_q;
    d["delta_q"] = w.mean.delta_q;
    d["fnz_qtarget"] = w.mean.fnz_qtarget;
    d["fnz_reward"] = w.mean.fnz_reward;
    d["ssl_loss"] = w.mean.ssl_loss;
    diag.append(d);
  }
  py::dict out;
  out["seed"] = r.seed;
  out["env"] = r.env;
  out["failed"] = r.failed;
  out["failure"] = r.failure;
  out["curve"] = curve;
  out["eval_scores"] = r.eval_scores;
  out["diag"] = diag;
  out["final_score"] = r.final_score();
  return out;
}

py::dict stats_dict(const SummaryStats& s) {
  py::dict d;
  d["mean"] = s.mean;
  d["std"] = s.stddev;
  d["rel"] = s.rel ? py::cast(*s.rel) : py::none();
  d["n"] = s.n;
  return d;
}

// Runs a CLI command and returns (exit code, stdout, stderr).
template <typename Opts, typename Fn>
py::tuple run_command(Fn fn, const Opts& opts) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = fn(opts, out, err);
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_varlab, m) {
  m.doc() = "Variance analysis toolkit for actor-critic agents";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("pnorm", [](const RealVec& x) { return pnorm_forward(x); }, py::arg("x"));
  m.def("layer_norm", [](const RealVec& x) { return layer_norm_forward(x); }, py::arg("x"));

  m.def("env_names", &env_names);
  m.def(
      "env_info",
      [](const std::string& name) {
        const EnvSpec spec = make_env(name);
        py::dict d;
        d["name"] = spec.name;
        d["state_dim"] = spec.state_dim;
        d["action_dim"] = spec.action_dim;
        d["episode_len"] = spec.episode_len;
        d["action_repeat"] = spec.action_repeat;
        d["sparse"] = spec.reward_kind == RewardKind::kSparse;
        return d;
      },
      py::arg("name"));
  m.def(
      "rollout_constant",
      [](const std::string& name, const RealVec& action, std::uint64_t seed) {
        const EnvSpec spec = make_env(name);
        return rollout(spec, [&](const RealVec&) { return action; }, seed).total_reward;
      },
      py::arg("env"), py::arg("action"), py::arg("seed") = 0, "Return of an episode under a fixed action.");

  m.def(
      "run_seed",
      [](const std::string& env, std::uint64_t seed, const std::string& agent_json, const std::string& preset,
         std::int64_t total_steps, std::int64_t eval_every, int eval_episodes, std::int64_t diag_every) {
        AgentConfig cfg = parse_agent(agent_json);
        if (!preset.empty()) cfg = apply_preset(preset, cfg, PresetScale{}, total_steps);
        cfg.validate();
        RunSettings s{total_steps, eval_every, eval_episodes, diag_every};
        RunRecord r;
        {
          py::gil_scoped_release release;
          r = run_seed(cfg, make_env(env), seed, s);
        }
        return record_dict(r);
      },
      py::arg("env"), py::arg("seed") = 0, py::arg("agent_json") = "{}", py::arg("preset") = "",
      py::arg("total_steps") = 50000, py::arg("eval_every") = 1000, py::arg("eval_episodes") = 10,
      py::arg("diag_every") = 1000, "Train one agent and return its run record as a dict.");

  m.def("preset_names", &preset_names);
  m.def(
      "summarize_scores", [](const std::vector<double>& scores) { return stats_dict(summarize_scores(scores)); },
      py::arg("scores"));
  m.def("pearson", &pearson, py::arg("x"), py::arg("y"));
  m.def(
      "variance_decomposition",
      [](const std::vector<std::vector<double>>& scores) {
        const VarDecomp d = variance_decomposition(scores);
        py::dict out;
        out["alg_var"] = d.alg_var;
        out["alg_var_raw"] = d.alg_var_raw;
        out["sample_var"] = d.sample_var;
        out["perf_variance"] = d.perf_variance();
        out["runs"] = d.runs;
        out["samples"] = d.samples;
        return out;
      },
      py::arg("scores"));
  m.def("eval_gain_ratio", py::overload_cast<double, double, int, int>(&eval_gain_ratio), py::arg("alg_var"),
        py::arg("sample_var"), py::arg("s_from") = 10, py::arg("s_to") = 100);
  m.def("performance_profile", &performance_profile, py::arg("final_scores"), py::arg("taus"));
  m.def(
      "probe_policy",
      [](const std::string& policy_path, const std::string& env, const std::vector<double>& p_grid, int episodes,
         std::uint64_t seed) {
        const ActorNet actor = read_policy(policy_path);
        py::list rows;
        for (const auto& r : random_action_probe(greedy_policy(actor), make_env(env), p_grid, episodes, seed)) {
          rows.append(py::make_tuple(r.p, r.mean_return, r.std_return));
        }
        return rows;
      },
      py::arg("policy_path"), py::arg("env"), py::arg("p_grid"), py::arg("episodes") = 10, py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::string& config, std::uint64_t seed, const std::string& out_dir, const std::string& preset) {
        cli::TrainOptions o;
        o.config_path = config;
        o.seed = seed;
        if (!out_dir.empty()) o.out_dir = out_dir;
        if (!preset.empty()) o.preset = preset;
        return run_command(cli::cmd_train, o);
      },
      py::arg("config"), py::arg("seed") = 0, py::arg("out_dir") = "", py::arg("preset") = "",
      "Run the train command; returns (exit_code, stdout, stderr).");
  m.def(
      "bench",
      [](const std::string& config, const std::vector<std::string>& presets, const std::vector<std::string>& envs,
         std::optional<int> seeds, int parallel, const std::string& out_dir) {
        cli::BenchOptions o;
        o.config_path = config;
        o.presets = presets;
        o.envs = envs;
        o.seeds = seeds;
        o.parallel = parallel;
        if (!out_dir.empty()) o.out_dir = out_dir;
        return run_command(cli::cmd_bench, o);
      },
      py::arg("config"), py::arg("presets"), py::arg("envs") = std::vector<std::string>{},
      py::arg("seeds") = py::none(), py::arg("parallel") = 1, py::arg("out_dir") = "");
  m.def(
      "analyze",
      [](const std::string& run_dir, const std::string& what, const std::string& out_dir,
         std::optional<double> alg_var, std::optional<double> sample_var) {
        cli::AnalyzeOptions o;
        o.run_dir = run_dir;
        o.what = what;
        if (!out_dir.empty()) o.out_dir = out_dir;
        o.alg_var = alg_var;
        o.sample_var = sample_var;
        return run_command(cli::cmd_analyze, o);
      },
      py::arg("run_dir"), py::arg("what"), py::arg("out_dir") = "", py::arg("alg_var") = py::none(),
      py::arg("sample_var") = py::none());
}

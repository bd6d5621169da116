#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "varlab/config.hpp"
#include "varlab/records_io.hpp"

using namespace varlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("varlab_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_of(const std::string& json) {
  try {
    parse_experiment(json);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

RunRecord sample_record() {
  RunRecord r;
  r.seed = 7;
  r.env = "reacher";
  r.config_hash = "abc123";
  r.curve = {{100, 1.0 / 3.0}, {200, 2.5e-17}};
  r.eval_scores = {{0.1, 0.2, 0.7}, {1e300, -0.0, 3.0}};
  DiagWindow w;
  w.step = 100;
  w.updates = 18;
  w.mean.actor_grad_norm = std::nextafter(1.0, 2.0);
  w.mean.critic_loss = 0.1;
  w.mean.avg_abs_action = 0.97;
  w.mean.fnz_qtarget = 0.5;
  w.mean.ssl_loss = 1.25;
  r.diag = {w, w};
  r.diag[1].step = 200;
  r.pair_id = 3;
  r.pair_side = "B";
  return r;
}

}  // namespace

TEST_CASE("desk-scale defaults") {
  const ExperimentConfig d = default_experiment();
  CHECK(d.total_steps == 50000);
  CHECK(d.eval_every == 1000);
  CHECK(d.eval_episodes == 10);
  CHECK(d.seeds.size() == 20);
  CHECK(d.agent.noise_sched.duration == 25000);
  CHECK(d.preset_scale.warmup_steps == 2000);
  CHECK(d.preset_scale.ssl_short_steps == 5000);
  CHECK_FALSE(d.scale_note.empty());
}

TEST_CASE("config round-trip is a fixed point") {
  ExperimentConfig c = default_experiment();
  c.env = "reacher";
  c.agent.lr = 1.0 / 3.0;
  c.agent.grad_clip = 10.0;
  c.agent.penalty_lambda = 1e-6;
  c.seeds = {4, 9, 1};
  c.preset = "combined";
  const std::string once = serialize_experiment(c);
  const ExperimentConfig back = parse_experiment(once);
  CHECK(serialize_experiment(back) == once);
  CHECK(back.agent.lr == 1.0 / 3.0);
  CHECK(*back.agent.grad_clip == 10.0);
  CHECK_FALSE(back.agent.scale_down.has_value());
  CHECK(back.seeds == c.seeds);

  const AgentConfig a = parse_agent(serialize_agent(c.agent));
  CHECK(serialize_agent(a) == serialize_agent(c.agent));
  CHECK(config_hash(a) == config_hash(c.agent));
  AgentConfig other = a;
  other.tau = 0.02;
  CHECK(config_hash(other) != config_hash(a));

  CHECK(parse_experiment(R"({"env": "reacher", "seeds": 3})").seeds == std::vector<std::uint64_t>{0, 1, 2});
}

TEST_CASE("config errors name the field") {
  CHECK(error_of(R"({"total_steps": 100})").find("env") != std::string::npos);
  CHECK(error_of(R"({"env": "reacher", "colour": 1})").find("colour") != std::string::npos);
  CHECK(error_of(R"({"env": "reacher", "agent": {"batch_size": 3}})").find("agent.batch_size") != std::string::npos);
  CHECK(error_of(R"({"env": "reacher", "agent": {"lr": "fast"}})").find("agent.lr") != std::string::npos);
  CHECK(error_of(R"({"env": "cartpole"})").find("cartpole") != std::string::npos);
  CHECK(error_of(R"({"env": "reacher", "preset": "turbo"})").find("turbo") != std::string::npos);
  const std::string syntax = error_of("{\"env\": \n \"reacher\",, }");
  CHECK(syntax.find("line") != std::string::npos);
  CHECK_FALSE(error_of(R"({"env": "reacher", "agent": {"actor_pnorm": true, "layer_norm": true}})").empty());
  CHECK_THROWS_AS(load_experiment("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("presets") {
  const auto names = preset_names();
  CHECK(names.size() == 13);
  const AgentConfig base = desk_agent_defaults();
  const PresetScale scale;
  for (const auto& n : names) {
    const AgentConfig c = apply_preset(n, base, scale, 50000);
    CHECK_NOTHROW(c.validate());
    CHECK(c.lr == base.lr);
  }
  CHECK(config_hash(apply_preset("baseline", base, scale, 50000)) == config_hash(base));
  const AgentConfig comb = apply_preset("combined", base, scale, 50000);
  CHECK(comb.actor_pnorm);
  CHECK(comb.critic_pnorm);
  CHECK(comb.penalty_lambda == 1e-6);
  CHECK(comb.ssl_steps == 5000);
  CHECK_FALSE(comb.asym_clip);
  const AgentConfig pp = apply_preset("combined_pp", base, scale, 50000);
  CHECK(pp.asym_clip);
  CHECK(pp.ssl_steps == 50000);
  CHECK(apply_preset("lr_warmup", base, scale, 50000).warmup_steps == 2000);
  CHECK(*apply_preset("grad_clip_10", base, scale, 50000).grad_clip == 10.0);
  // Presets replace any method flag already set in the base.
  AgentConfig noisy = base;
  noisy.spectral = true;
  CHECK_FALSE(apply_preset("penalty", noisy, scale, 50000).spectral);
  try {
    apply_preset("nope", base, scale, 50000);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("combined_pp") != std::string::npos);
  }
}

TEST_CASE("run records round-trip bit-exactly") {
  const RunRecord r = sample_record();
  const std::string jsonl = run_jsonl(r);
  const std::string summary = run_summary_json(r, 20.0);
  std::size_t lines = 0;
  for (char ch : jsonl) lines += ch == '\n';
  CHECK(lines == r.curve.size() + r.diag.size());
  const RunRecord back = parse_run(jsonl, summary);
  CHECK(back.seed == 7);
  CHECK(back.env == "reacher");
  CHECK(*back.pair_id == 3);
  CHECK(back.pair_side == "B");
  REQUIRE(back.curve.size() == 2);
  CHECK(std::memcmp(&back.curve[0].eval_mean, &r.curve[0].eval_mean, sizeof(double)) == 0);
  CHECK(back.eval_scores == r.eval_scores);
  CHECK(std::signbit(back.eval_scores[1][1]));
  CHECK(back.diag[0].mean.actor_grad_norm == r.diag[0].mean.actor_grad_norm);
  CHECK(back.diag[1].updates == 18);
  CHECK(run_jsonl(back) == jsonl);

  CHECK(format_double(0.1) == "0.10000000000000001");

  std::string bad = jsonl;
  bad.replace(bad.find("varlab.run/1"), 12, "varlab.run/9");
  CHECK_THROWS_AS(parse_run(bad, summary), FormatError);
  std::string bad_summary = summary;
  bad_summary.replace(bad_summary.find("varlab.summary/1"), 16, "varlab.summary/2");
  CHECK_THROWS_AS(parse_run(jsonl, bad_summary), FormatError);
}

TEST_CASE("run files on disk") {
  const fs::path dir = scratch_dir("runs");
  RunRecord a = sample_record();
  RunRecord b = sample_record();
  b.seed = 2;
  write_run(dir, a, 20.0);
  write_run(dir, b, 20.0);
  CHECK(fs::exists(dir / "run_7.jsonl"));
  CHECK(fs::exists(dir / "run_7.summary.json"));
  CHECK(run_jsonl_path(dir, 7) == dir / "run_7.jsonl");
  const auto runs = read_runs(dir);
  REQUIRE(runs.size() == 2);
  CHECK(runs[0].seed == 2);
  CHECK(runs[1].seed == 7);
  for (const auto& entry : fs::directory_iterator(dir)) {
    CHECK(entry.path().extension() != ".tmp");
  }
  fs::remove_all(dir);
}

TEST_CASE("csv tables carry a schema") {
  CsvTable t;
  t.schema = "varlab.test/1";
  t.header = {"a", "b"};
  t.rows = {{"1", "x"}, {"2", "y"}};
  const std::string text = t.to_string();
  CHECK(text.rfind("#schema=varlab.test/1\n", 0) == 0);
  const CsvTable back = CsvTable::parse(text, "varlab.test/1");
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  CHECK_THROWS_AS(CsvTable::parse(text, "varlab.test/2"), FormatError);
  CHECK_THROWS_AS(CsvTable::parse("a,b\n1,2\n", "varlab.test/1"), FormatError);
}

TEST_CASE("policy files") {
  for (bool pnorm : {false, true}) {
    AgentConfig cfg;
    cfg.feature_dim = 5;
    cfg.hidden_dim = 7;
    cfg.actor_pnorm = pnorm;
    Rng rng = make_rng(1, 1);
    const ActorNet actor = make_actor(cfg, 3, 2, rng);
    const std::string bytes = serialize_policy(actor);
    CHECK(bytes.substr(0, 8) == "VARLABPL");
    const ActorNet back = parse_policy(bytes);
    CHECK(serialize_policy(back) == bytes);
    const EnvSpec env = make_env("reacher");
    ActorNet sized = make_actor(cfg, env.state_dim, env.action_dim, rng);
    const ActorNet sized_back = parse_policy(serialize_policy(sized));
    CHECK(evaluate_policy(env, greedy_policy(sized), 3, 5) == evaluate_policy(env, greedy_policy(sized_back), 3, 5));

    std::string wrong_version = bytes;
    wrong_version[8] = 2;
    try {
      parse_policy(wrong_version);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_policy(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(parse_policy(bytes + "x"), FormatError);
    CHECK_THROWS_AS(parse_policy("NOTAPOLICY000000"), FormatError);
  }

  // Byte layout: version and count are little-endian u32 after the magic.
  AgentConfig cfg;
  cfg.feature_dim = 2;
  cfg.hidden_dim = 2;
  cfg.hidden_layers = 1;
  Rng rng = make_rng(2, 1);
  const std::string bytes = serialize_policy(make_actor(cfg, 1, 1, rng));
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);
  CHECK(bytes.substr(9, 3) == std::string(3, '\0'));
  CHECK(static_cast<unsigned char>(bytes[12]) == 2);

  const fs::path dir = scratch_dir("policy");
  const ActorNet actor = make_actor(cfg, 1, 1, rng);
  write_policy(dir / "p.bin", actor);
  CHECK(serialize_policy(read_policy(dir / "p.bin")) == serialize_policy(actor));
  fs::remove_all(dir);
}

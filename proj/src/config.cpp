#include "varlab/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "json_emit.hpp"
#include "varlab/records_io.hpp"

namespace varlab {

namespace detail {

namespace {

void emit(const OrderedJson& j, int indent, int depth, std::string& out) {
  const auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case OrderedJson::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (const auto& [key, value] : j.items()) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += OrderedJson(key).dump();
        out += indent < 0 ? ":" : ": ";
        emit(value, indent, depth + 1, out);
      }
      newline(depth);
      out += '}';
      return;
    }
    case OrderedJson::value_t::array: {
      out += '[';
      bool first = true;
      for (const auto& value : j) {
        if (!first) out += indent < 0 ? "," : ", ";
        first = false;
        emit(value, indent, depth + 1, out);
      }
      out += ']';
      return;
    }
    case OrderedJson::value_t::number_float: {
      const double x = j.get<double>();
      out += std::isfinite(x) ? format_double(x) : "null";
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

std::string dump_json(const OrderedJson& j, int indent) {
  std::string out;
  emit(j, indent, 0, out);
  return out;
}

}  // namespace detail

namespace {

using detail::OrderedJson;
using Json = nlohmann::json;

// Typed field access that records which keys were consumed so leftovers can
// be reported as unknown.
class FieldReader {
 public:
  FieldReader(const Json& obj, std::string context) : obj_(obj), context_(std::move(context)) {
    if (!obj_.is_object()) throw ConfigError(where("") + "expected a JSON object");
  }

  bool has(const char* key) const { return obj_.contains(key); }

  void read(const char* key, double& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + "expected a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, bool& out) {
    if (const Json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const Json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + "expected a string");
      out = v->get<std::string>();
    }
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  void read(const char* key, Int& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + "expected an integer");
      if (std::is_unsigned_v<Int> && v->is_number_integer() && !v->is_number_unsigned() && v->get<std::int64_t>() < 0) {
        throw ConfigError(where(key) + "expected a non-negative integer");
      }
      out = v->get<Int>();
    }
  }
  void read(const char* key, std::optional<double>& out) {
    if (const Json* v = take(key)) {
      if (v->is_null()) {
        out.reset();
      } else if (v->is_number()) {
        out = v->get<double>();
      } else {
        throw ConfigError(where(key) + "expected a number or null");
      }
    }
  }
  const Json* take(const char* key) {
    if (!obj_.contains(key)) return nullptr;
    used_.insert(key);
    return &obj_.at(key);
  }
  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!used_.count(key)) throw ConfigError(where(key.c_str()) + "unknown key");
    }
  }
  std::string where(const char* key) const {
    std::string path = context_;
    if (*key) path += (path.empty() ? "" : ".") + std::string(key);
    return "config field '" + path + "': ";
  }

 private:
  const Json& obj_;
  std::string context_;
  std::set<std::string> used_;
};

OrderedJson agent_json(const AgentConfig& c) {
  OrderedJson j;
  j["lr"] = c.lr;
  j["tau"] = c.tau;
  j["update_every"] = c.update_every;
  j["gamma"] = c.gamma;
  j["n_step"] = c.n_step;
  j["batch"] = c.batch;
  j["seed_frames"] = c.seed_frames;
  j["noise_schedule"] = {{"start", c.noise_sched.start}, {"end", c.noise_sched.end}, {"duration", c.noise_sched.duration}};
  j["noise_clip"] = c.noise_clip;
  j["actor_pnorm"] = c.actor_pnorm;
  j["critic_pnorm"] = c.critic_pnorm;
  j["layer_norm"] = c.layer_norm;
  j["spectral"] = c.spectral;
  j["output_norm"] = c.output_norm;
  j["penalty_lambda"] = c.penalty_lambda;
  j["warmup_steps"] = c.warmup_steps;
  j["grad_clip"] = c.grad_clip ? OrderedJson(*c.grad_clip) : OrderedJson(nullptr);
  j["scale_down"] = c.scale_down ? OrderedJson(*c.scale_down) : OrderedJson(nullptr);
  j["asym_clip"] = c.asym_clip;
  j["nz_gate"] = c.nz_gate;
  j["ssl_steps"] = c.ssl_steps;
  j["feature_dim"] = c.feature_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["hidden_layers"] = c.hidden_layers;
  j["ssl_hidden"] = c.ssl_hidden;
  j["ssl_view_noise"] = c.ssl_view_noise;
  j["replay_capacity"] = c.replay_capacity;
  j["use_actor_target"] = c.use_actor_target;
  j["spectral_iters"] = c.spectral_iters;
  return j;
}

AgentConfig agent_from(const Json& j, AgentConfig c, const std::string& context) {
  FieldReader r(j, context);
  r.read("lr", c.lr);
  r.read("tau", c.tau);
  r.read("update_every", c.update_every);
  r.read("gamma", c.gamma);
  r.read("n_step", c.n_step);
  r.read("batch", c.batch);
  r.read("seed_frames", c.seed_frames);
  if (const Json* ns = r.take("noise_schedule")) {
    FieldReader nr(*ns, context + ".noise_schedule");
    nr.read("start", c.noise_sched.start);
    nr.read("end", c.noise_sched.end);
    nr.read("duration", c.noise_sched.duration);
    nr.finish();
  }
  r.read("noise_clip", c.noise_clip);
  r.read("actor_pnorm", c.actor_pnorm);
  r.read("critic_pnorm", c.critic_pnorm);
  r.read("layer_norm", c.layer_norm);
  r.read("spectral", c.spectral);
  r.read("output_norm", c.output_norm);
  r.read("penalty_lambda", c.penalty_lambda);
  r.read("warmup_steps", c.warmup_steps);
  r.read("grad_clip", c.grad_clip);
  r.read("scale_down", c.scale_down);
  r.read("asym_clip", c.asym_clip);
  r.read("nz_gate", c.nz_gate);
  r.read("ssl_steps", c.ssl_steps);
  r.read("feature_dim", c.feature_dim);
  r.read("hidden_dim", c.hidden_dim);
  r.read("hidden_layers", c.hidden_layers);
  r.read("ssl_hidden", c.ssl_hidden);
  r.read("ssl_view_noise", c.ssl_view_noise);
  r.read("replay_capacity", c.replay_capacity);
  r.read("use_actor_target", c.use_actor_target);
  r.read("spectral_iters", c.spectral_iters);
  r.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config field '") + context + "': " + e.what());
  }
  return c;
}

Json parse_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

void reset_methods(AgentConfig& c) {
  c.actor_pnorm = false;
  c.critic_pnorm = false;
  c.layer_norm = false;
  c.spectral = false;
  c.output_norm = false;
  c.penalty_lambda = 0.0;
  c.warmup_steps = 0;
  c.grad_clip.reset();
  c.scale_down.reset();
  c.asym_clip = false;
  c.nz_gate = false;
  c.ssl_steps = 0;
}

constexpr double kPenaltyLambda = 1e-6;
constexpr double kScaleDownFactor = 100.0;

}  // namespace

RunSettings ExperimentConfig::run_settings() const {
  RunSettings s;
  s.total_steps = total_steps;
  s.eval_every = eval_every;
  s.eval_episodes = eval_episodes;
  s.diag_every = diag_every;
  return s;
}

AgentConfig ExperimentConfig::resolved_agent() const {
  if (preset.empty()) return agent;
  return apply_preset(preset, agent, preset_scale, total_steps);
}

AgentConfig desk_agent_defaults() {
  AgentConfig c;
  c.noise_sched.duration = 25000;
  return c;
}

ExperimentConfig default_experiment() {
  ExperimentConfig cfg;
  cfg.agent = desk_agent_defaults();
  for (std::uint64_t s = 0; s < 20; ++s) cfg.seeds.push_back(s);
  cfg.scale_note =
      "desk scale: step counts are the reference values divided by 20 (noise schedule 500000 -> 25000, "
      "lr warmup 10000 -> 2000 updates, early self-supervision 10000 -> 5000 steps)";
  return cfg;
}

ExperimentConfig parse_experiment(const std::string& json_text) {
  const Json j = parse_text(json_text);
  ExperimentConfig cfg = default_experiment();
  FieldReader r(j, "");
  if (!r.has("env")) throw ConfigError("config field 'env': missing (required)");
  r.read("env", cfg.env);
  try {
    (void)make_env(cfg.env);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config field 'env': ") + e.what());
  }
  r.read("total_steps", cfg.total_steps);
  r.read("eval_every", cfg.eval_every);
  r.read("eval_episodes", cfg.eval_episodes);
  r.read("diag_every", cfg.diag_every);
  if (const Json* seeds = r.take("seeds")) {
    cfg.seeds.clear();
    if (seeds->is_number_unsigned()) {
      for (std::uint64_t s = 0; s < seeds->get<std::uint64_t>(); ++s) cfg.seeds.push_back(s);
    } else if (seeds->is_array()) {
      for (const Json& s : *seeds) {
        if (!s.is_number_unsigned()) throw ConfigError("config field 'seeds': entries must be non-negative integers");
        cfg.seeds.push_back(s.get<std::uint64_t>());
      }
    } else {
      throw ConfigError("config field 'seeds': expected a count or a list of seeds");
    }
  }
  r.read("preset", cfg.preset);
  if (!cfg.preset.empty() && !is_preset(cfg.preset)) {
    throw ConfigError("config field 'preset': unknown preset '" + cfg.preset + "'");
  }
  if (const Json* agent = r.take("agent")) cfg.agent = agent_from(*agent, cfg.agent, "agent");
  if (const Json* ps = r.take("preset_scale")) {
    FieldReader pr(*ps, "preset_scale");
    pr.read("warmup_steps", cfg.preset_scale.warmup_steps);
    pr.read("ssl_short_steps", cfg.preset_scale.ssl_short_steps);
    pr.finish();
  }
  r.read("stuck_floor", cfg.stuck_floor);
  r.read("output_dir", cfg.output_dir);
  r.read("scale_note", cfg.scale_note);
  r.finish();
  if (cfg.total_steps <= 0) throw ConfigError("config field 'total_steps': must be positive");
  if (cfg.eval_every <= 0) throw ConfigError("config field 'eval_every': must be positive");
  if (cfg.eval_episodes <= 0) throw ConfigError("config field 'eval_episodes': must be positive");
  if (cfg.diag_every <= 0) throw ConfigError("config field 'diag_every': must be positive");
  if (cfg.total_steps < cfg.agent.seed_frames) throw ConfigError("config field 'total_steps': smaller than seed_frames");
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment(ss.str());
}

std::string serialize_experiment(const ExperimentConfig& cfg) {
  OrderedJson j;
  j["scale_note"] = cfg.scale_note;
  j["env"] = cfg.env;
  j["total_steps"] = cfg.total_steps;
  j["eval_every"] = cfg.eval_every;
  j["eval_episodes"] = cfg.eval_episodes;
  j["diag_every"] = cfg.diag_every;
  j["seeds"] = cfg.seeds;
  j["preset"] = cfg.preset;
  j["agent"] = agent_json(cfg.agent);
  j["preset_scale"] = {{"warmup_steps", cfg.preset_scale.warmup_steps},
                       {"ssl_short_steps", cfg.preset_scale.ssl_short_steps}};
  j["stuck_floor"] = cfg.stuck_floor;
  j["output_dir"] = cfg.output_dir;
  return detail::dump_json(j, 2) + "\n";
}

std::string serialize_agent(const AgentConfig& cfg) { return detail::dump_json(agent_json(cfg)); }

AgentConfig parse_agent(const std::string& json_text) {
  return agent_from(parse_text(json_text), AgentConfig{}, "agent");
}

std::string config_hash(const AgentConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : serialize_agent(cfg)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> preset_names() {
  return {"baseline",     "penalty",      "actor_pnorm", "both_pnorm", "layer_norm", "lr_warmup",  "grad_clip_1",
          "grad_clip_10", "spectral",     "scale_down",  "output_norm", "combined",  "combined_pp"};
}

bool is_preset(const std::string& name) {
  const auto names = preset_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

AgentConfig apply_preset(const std::string& name, const AgentConfig& base, const PresetScale& scale,
                         std::int64_t total_steps) {
  AgentConfig c = base;
  reset_methods(c);
  if (name == "baseline") {
  } else if (name == "penalty") {
    c.penalty_lambda = kPenaltyLambda;
  } else if (name == "actor_pnorm") {
    c.actor_pnorm = true;
  } else if (name == "both_pnorm") {
    c.actor_pnorm = true;
    c.critic_pnorm = true;
  } else if (name == "layer_norm") {
    c.layer_norm = true;
  } else if (name == "lr_warmup") {
    c.warmup_steps = scale.warmup_steps;
  } else if (name == "grad_clip_1") {
    c.grad_clip = 1.0;
  } else if (name == "grad_clip_10") {
    c.grad_clip = 10.0;
  } else if (name == "spectral") {
    c.spectral = true;
  } else if (name == "scale_down") {
    c.scale_down = kScaleDownFactor;
  } else if (name == "output_norm") {
    c.output_norm = true;
  } else if (name == "combined" || name == "combined_pp") {
    c.actor_pnorm = true;
    c.critic_pnorm = true;
    c.penalty_lambda = kPenaltyLambda;
    c.ssl_steps = scale.ssl_short_steps;
    if (name == "combined_pp") {
      c.asym_clip = true;
      c.ssl_steps = total_steps;
    }
  } else {
    std::string valid;
    for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (valid: " + valid + ")");
  }
  return c;
}

}  // namespace varlab

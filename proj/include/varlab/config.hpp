#pragma once

// Experiment configuration files and named method presets.
//
// Config files are flat JSON with one nested "agent" block. Unknown keys are
// rejected. Floats are written with 17 significant digits.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "varlab/agent.hpp"
#include "varlab/bench.hpp"

namespace varlab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Step counts that presets scale with the experiment's step budget.
struct PresetScale {
  std::int64_t warmup_steps = 2000;     // lr_warmup
  std::int64_t ssl_short_steps = 5000;  // combined: early self-supervision
};

struct ExperimentConfig {
  std::string env;
  std::int64_t total_steps = 50000;
  std::int64_t eval_every = 1000;
  int eval_episodes = 10;
  std::int64_t diag_every = 1000;
  std::vector<std::uint64_t> seeds;
  std::string preset;  // optional; applied on top of `agent`
  AgentConfig agent;
  PresetScale preset_scale;
  double stuck_floor = 20.0;
  std::string output_dir = "runs";
  std::string scale_note;

  RunSettings run_settings() const;
  // Agent config with the preset (if any) applied.
  AgentConfig resolved_agent() const;
};

// Desk-scale defaults: paper step counts divided by 20.
ExperimentConfig default_experiment();
AgentConfig desk_agent_defaults();

// Throws ConfigError naming the offending field (or the parse position).
ExperimentConfig parse_experiment(const std::string& json_text);
ExperimentConfig load_experiment(const std::string& path);
std::string serialize_experiment(const ExperimentConfig& cfg);

std::string serialize_agent(const AgentConfig& cfg);
AgentConfig parse_agent(const std::string& json_text);
// Short stable hex digest of the serialized agent config.
std::string config_hash(const AgentConfig& cfg);

std::vector<std::string> preset_names();
bool is_preset(const std::string& name);
// Throws ConfigError for unknown names.
AgentConfig apply_preset(const std::string& name, const AgentConfig& base, const PresetScale& scale,
                         std::int64_t total_steps);

}  // namespace varlab

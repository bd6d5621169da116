#pragma once

// DDPG-style learner: actor, twin critics sharing a feature trunk, target
// critics, n-step replay and every stabilization switch as an independent
// option in AgentConfig.

#include <cstdint>
#include <optional>
#include <string>

#include "varlab/diffmath.hpp"
#include "varlab/envworld.hpp"
#include "varlab/replay.hpp"

namespace varlab {

struct AgentConfig {
  double lr = 1e-4;
  double tau = 1e-2;
  int update_every = 2;
  double gamma = 0.99;
  int n_step = 3;
  int batch = 256;
  std::int64_t seed_frames = 4000;
  LinearSchedule noise_sched{1.0, 0.1, 500000};
  double noise_clip = 0.3;

  bool actor_pnorm = false;
  bool critic_pnorm = false;
  bool layer_norm = false;
  bool spectral = false;
  bool output_norm = false;
  double penalty_lambda = 0.0;
  std::int64_t warmup_steps = 0;  // counted in gradient updates
  std::optional<double> grad_clip;
  std::optional<double> scale_down;
  bool asym_clip = false;
  bool nz_gate = false;
  std::int64_t ssl_steps = 0;  // SSL loss active while step < ssl_steps

  // Architecture and plumbing.
  int feature_dim = 50;
  int hidden_dim = 256;
  int hidden_layers = 2;
  int ssl_hidden = 512;
  double ssl_view_noise = 0.01;
  std::size_t replay_capacity = 100000;
  bool use_actor_target = false;
  int spectral_iters = 1;

  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

// Feature trunk (one linear layer followed by tanh) and MLP head.
struct ActorNet {
  MlpParams trunk;
  MlpParams head;
};

// Shared trunk with twin Q heads taking [features; action].
struct CriticNet {
  MlpParams trunk;
  MlpParams q1;
  MlpParams q2;
};

struct SslHeads {
  MlpParams head;          // feature_dim -> ssl_hidden -> feature_dim
  MlpParams target_trunk;  // EMA of the critic trunk
};

struct UpdateMetrics {
  double actor_grad_norm = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double avg_abs_action = 0.0;
  double avg_q = 0.0;
  double delta_q = 0.0;
  double fnz_qtarget = 0.0;
  double fnz_reward = 0.0;
  double ssl_loss = 0.0;
  int pnorm_clamped = 0;
};

// |y| above this counts as a non-zero Q target.
inline constexpr double kNonzeroTarget = 1e-4;
// Saturation threshold on mean |action| used by reports.
inline constexpr double kSaturatedAction = 0.95;

ActorNet make_actor(const AgentConfig& cfg, int state_dim, int action_dim, Rng& rng);
CriticNet make_critic(const AgentConfig& cfg, int state_dim, int action_dim, Rng& rng);
SslHeads make_ssl_heads(const AgentConfig& cfg, const CriticNet& critic, Rng& rng);

// Pre-tanh actor output for a batch of states (one per column).
RealMat actor_pre_activation(const ActorNet& actor, const RealMat& states);
RealVec actor_pre_activation(const ActorNet& actor, const RealVec& state);

struct QValues {
  RealVec q1;
  RealVec q2;
};
QValues critic_values(const CriticNet& critic, const RealMat& states, const RealMat& actions);

// min(Q1, Q2), or the average when asymmetric clipping is on.
RealVec bootstrap_value(const RealVec& q1, const RealVec& q2, bool asym_clip);

// y = r_sum + disc * Qhat(s_n, a~) with a~ the smoothed policy action.
RealVec td_target(const CriticNet& critic_target, const ActorNet& policy, const Batch& batch, const AgentConfig& cfg,
                  double sigma, Rng& noise_rng);

struct CriticGrads {
  double loss = 0.0;
  GradBuffer trunk;
  GradBuffer q1;
  GradBuffer q2;
  RealVec q1_values;
  RealVec q2_values;
};
// mean over the batch of (Q1 - y)^2 + (Q2 - y)^2; y is a constant.
CriticGrads critic_loss_and_grad(const CriticNet& critic, const RealMat& states, const RealMat& actions,
                                 const RealVec& targets);

struct ActorGrads {
  double loss = 0.0;
  GradBuffer trunk;
  GradBuffer head;
  double avg_abs_action = 0.0;
  int pnorm_clamped = 0;
  // Filled only when split_paths is requested.
  double q_path_norm = 0.0;
  double penalty_path_norm = 0.0;
};
// mean over the batch of -min(Q1, Q2)(s, tanh(a_pre)) + lambda * |a_pre|^2.
// The critic is held fixed; only actor gradients are produced.
ActorGrads actor_loss_and_grad(const ActorNet& actor, const CriticNet& critic, const RealMat& states, double lambda,
                               bool split_paths = false);
double actor_loss(const ActorNet& actor, const CriticNet& critic, const RealMat& states, double lambda);

struct SslGrads {
  double loss = 0.0;
  GradBuffer trunk;
  GradBuffer head;
};
// Symmetrized squared distance between normalized online predictions and
// normalized target features for two views (one sample per column).
SslGrads ssl_loss_and_grad(const MlpParams& trunk, const SslHeads& heads, const RealMat& view1, const RealMat& view2);

enum class ActionMode { kExplore, kEval };

// eval: tanh(a_pre). explore: tanh(a_pre) + N(0, sigma^2) clamped to [-1, 1].
// Throws NumericError (with the offending state) on non-finite output.
RealVec select_action(const ActorNet& actor, const RealVec& obs, double sigma, ActionMode mode, Rng& noise_rng);

// Master-seed derived streams. Runs that share `shared` share network
// initialization and seed-phase experience; `run` drives everything else.
struct RngKeys {
  std::uint64_t shared = 0;
  std::uint64_t run = 0;

  static RngKeys single(std::uint64_t seed) { return {seed, seed}; }
};

class Agent {
 public:
  Agent(const AgentConfig& cfg, const EnvSpec& env, const RngKeys& keys);

  // One environment interaction at global step `step`, followed by a
  // training update when the gate is open.
  std::optional<UpdateMetrics> step(std::int64_t step);

  RealVec act(const RealVec& obs, std::int64_t step, ActionMode mode);
  // Deterministic tanh(a_pre).
  RealVec eval_action(const RealVec& obs) const;

  bool training_gate(std::int64_t step) const;

  const AgentConfig& config() const { return cfg_; }
  const EnvSpec& env() const { return env_; }
  const ActorNet& actor() const { return actor_; }
  const CriticNet& critic() const { return critic_; }
  const CriticNet& critic_target() const { return critic_target_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::int64_t num_updates() const { return num_updates_; }
  const Batch& last_batch() const { return last_batch_; }
  const RealVec& last_targets() const { return last_targets_; }

 private:
  UpdateMetrics update(std::int64_t step);
  double current_lr() const;

  AgentConfig cfg_;
  EnvSpec env_;
  Rng init_rng_;
  Rng seed_action_rng_;
  Rng seed_env_rng_;
  Rng env_rng_;
  Rng noise_rng_;
  Rng sample_rng_;

  ActorNet actor_;
  ActorNet actor_target_;
  CriticNet critic_;
  CriticNet critic_target_;
  std::optional<SslHeads> ssl_;

  AdamState actor_trunk_opt_;
  AdamState actor_head_opt_;
  AdamState critic_trunk_opt_;
  AdamState critic_q1_opt_;
  AdamState critic_q2_opt_;
  AdamState ssl_head_opt_;

  ReplayBuffer buffer_;
  EnvState env_state_;
  bool need_reset_ = true;
  std::int64_t num_updates_ = 0;
  Batch last_batch_;
  RealVec last_targets_;
};

}  // namespace varlab

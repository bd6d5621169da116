#pragma once

// Seedable toy continuous-control tasks with actions in [-1, 1]^n.
//
// Roster:
//   pendulum_swingup         dense, reward (1 + cos theta) / 2 per physics tick
//   pendulum_swingup_sparse  1 per tick when |theta| < 0.15 and |theta_dot| < 1
//   reacher                  2-link planar arm, dense 1 - tanh(distance)
//   reacher_sparse           1 per tick while the fingertip is within 0.1 of the target
//   point_mass               2-d point mass driven to the origin, dense 1 - tanh(distance)
//
// Pendulum angles are measured from upright (theta = 0 is balanced).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "varlab/diffmath.hpp"

namespace varlab {

enum class RewardKind : std::uint8_t { kDense = 0, kSparse = 1 };
enum class EnvKind : std::uint8_t { kPendulum = 0, kReacher = 1, kPointMass = 2 };

struct PhysicsConstants {
  double dt = 0.05;
  double torque_scale = 2.0;
  double gravity = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double max_speed = 8.0;
  double damping = 0.0;
};

struct EnvSpec {
  std::string name;
  EnvKind kind = EnvKind::kPendulum;
  int state_dim = 0;   // observation length
  int action_dim = 0;
  int episode_len = 400;  // physics ticks
  int action_repeat = 2;
  RewardKind reward_kind = RewardKind::kDense;
  PhysicsConstants physics;

  int control_steps() const { return episode_len / action_repeat; }
  double max_step_reward() const { return static_cast<double>(action_repeat); }
};

// Throws std::invalid_argument for unknown names.
EnvSpec make_env(const std::string& name);
std::vector<std::string> env_names();

// Pendulum reset: theta uniform within kPendulumResetSpread of pi (hanging),
// theta_dot uniform in [-kPendulumResetSpeed, kPendulumResetSpeed].
inline constexpr double kPendulumResetSpread = 0.2;
inline constexpr double kPendulumResetSpeed = 0.1;
inline constexpr double kSparseAngle = 0.15;
inline constexpr double kSparseSpeed = 1.0;
inline constexpr double kReacherTargetRadius = 0.1;

struct EnvState {
  // pendulum: (theta, theta_dot)
  // reacher: (q1, q2, q1_dot, q2_dot, target_x, target_y)
  // point_mass: (x, y, vx, vy)
  RealVec q;
  int t = 0;  // physics ticks elapsed
};

struct StepResult {
  EnvState next;
  double reward = 0.0;
  bool done = false;
};

EnvState env_reset(const EnvSpec& spec, std::uint64_t seed);
EnvState env_reset(const EnvSpec& spec, Rng& rng);
StepResult env_step(const EnvSpec& spec, const EnvState& state, const RealVec& action);
RealVec observe(const EnvSpec& spec, const EnvState& state);

// Total mechanical energy of a pendulum state (zero potential at the pivot).
double pendulum_energy(const EnvSpec& spec, const EnvState& state);

double wrap_angle(double a);

using Policy = std::function<RealVec(const RealVec& obs)>;

struct TrajectoryStep {
  RealVec obs;
  RealVec action;
  double reward = 0.0;
  RealVec next_obs;
  bool done = false;
};

struct Rollout {
  std::vector<TrajectoryStep> steps;
  double total_reward = 0.0;
};

// Plays one full episode from env_reset(spec, seed). Actions are clamped to
// [-1, 1]; max_steps <= 0 means the full episode.
Rollout rollout(const EnvSpec& spec, const Policy& policy, std::uint64_t seed, int max_steps = 0);

}  // namespace varlab

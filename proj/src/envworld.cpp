#include "varlab/envworld.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace varlab {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kLink = 0.5;

EnvSpec base_spec(std::string name, EnvKind kind, int state_dim, int action_dim, RewardKind reward) {
  EnvSpec spec;
  spec.name = std::move(name);
  spec.kind = kind;
  spec.state_dim = state_dim;
  spec.action_dim = action_dim;
  spec.reward_kind = reward;
  return spec;
}

void fingertip(const RealVec& q, double& x, double& y) {
  x = kLink * std::cos(q(0)) + kLink * std::cos(q(0) + q(1));
  y = kLink * std::sin(q(0)) + kLink * std::sin(q(0) + q(1));
}

double tick_reward(const EnvSpec& spec, const RealVec& q) {
  switch (spec.kind) {
    case EnvKind::kPendulum:
      if (spec.reward_kind == RewardKind::kSparse) {
        return (std::abs(q(0)) < kSparseAngle && std::abs(q(1)) < kSparseSpeed) ? 1.0 : 0.0;
      }
      return 0.5 * (1.0 + std::cos(q(0)));
    case EnvKind::kReacher: {
      double x = 0.0;
      double y = 0.0;
      fingertip(q, x, y);
      const double dist = std::hypot(x - q(4), y - q(5));
      if (spec.reward_kind == RewardKind::kSparse) return dist < kReacherTargetRadius ? 1.0 : 0.0;
      return 1.0 - std::tanh(dist);
    }
    case EnvKind::kPointMass:
      return 1.0 - std::tanh(std::hypot(q(0), q(1)));
  }
  return 0.0;
}

void physics_tick(const EnvSpec& spec, RealVec& q, const RealVec& action) {
  const PhysicsConstants& c = spec.physics;
  switch (spec.kind) {
    case EnvKind::kPendulum: {
      const double accel = (c.gravity / c.length) * std::sin(q(0)) +
                           c.torque_scale * action(0) / (c.mass * c.length * c.length) - c.damping * q(1);
      q(1) = std::clamp(q(1) + c.dt * accel, -c.max_speed, c.max_speed);
      q(0) = wrap_angle(q(0) + c.dt * q(1));
      break;
    }
    case EnvKind::kReacher:
      for (int j = 0; j < 2; ++j) {
        const double accel = c.torque_scale * action(j) - c.damping * q(2 + j);
        q(2 + j) = std::clamp(q(2 + j) + c.dt * accel, -c.max_speed, c.max_speed);
        q(j) = wrap_angle(q(j) + c.dt * q(2 + j));
      }
      break;
    case EnvKind::kPointMass:
      for (int j = 0; j < 2; ++j) {
        const double accel = c.torque_scale * action(j) - c.damping * q(2 + j);
        q(2 + j) = std::clamp(q(2 + j) + c.dt * accel, -c.max_speed, c.max_speed);
        q(j) = q(j) + c.dt * q(2 + j);
        if (std::abs(q(j)) > 1.5) {
          q(j) = std::clamp(q(j), -1.5, 1.5);
          q(2 + j) = 0.0;
        }
      }
      break;
  }
}

}  // namespace

double wrap_angle(double a) {
  const double two_pi = 2.0 * kPi;
  double w = a - two_pi * std::floor((a + kPi) / two_pi);
  if (w >= kPi) w -= two_pi;
  if (w < -kPi) w += two_pi;
  return w;
}

std::vector<std::string> env_names() {
  return {"pendulum_swingup", "pendulum_swingup_sparse", "point_mass", "reacher", "reacher_sparse"};
}

EnvSpec make_env(const std::string& name) {
  if (name == "pendulum_swingup") return base_spec(name, EnvKind::kPendulum, 3, 1, RewardKind::kDense);
  if (name == "pendulum_swingup_sparse") return base_spec(name, EnvKind::kPendulum, 3, 1, RewardKind::kSparse);
  if (name == "reacher" || name == "reacher_sparse") {
    EnvSpec spec = base_spec(name, EnvKind::kReacher, 8, 2,
                             name == "reacher" ? RewardKind::kDense : RewardKind::kSparse);
    spec.physics.torque_scale = 10.0;
    spec.physics.damping = 2.0;
    return spec;
  }
  if (name == "point_mass") {
    EnvSpec spec = base_spec(name, EnvKind::kPointMass, 4, 2, RewardKind::kDense);
    spec.physics.damping = 1.0;
    spec.physics.max_speed = 2.0;
    return spec;
  }
  throw std::invalid_argument("unknown environment '" + name + "'");
}

EnvState env_reset(const EnvSpec& spec, Rng& rng) {
  EnvState s;
  switch (spec.kind) {
    case EnvKind::kPendulum: {
      s.q.resize(2);
      const double theta = kPi + uniform(rng, -kPendulumResetSpread, kPendulumResetSpread);
      s.q(0) = wrap_angle(theta);
      s.q(1) = uniform(rng, -kPendulumResetSpeed, kPendulumResetSpeed);
      break;
    }
    case EnvKind::kReacher: {
      s.q = RealVec::Zero(6);
      s.q(0) = uniform(rng, -kPi, kPi);
      s.q(1) = uniform(rng, -kPi, kPi);
      const double radius = uniform(rng, 0.2, 0.9);
      const double angle = uniform(rng, -kPi, kPi);
      s.q(4) = radius * std::cos(angle);
      s.q(5) = radius * std::sin(angle);
      break;
    }
    case EnvKind::kPointMass:
      s.q = RealVec::Zero(4);
      s.q(0) = uniform(rng, -1.0, 1.0);
      s.q(1) = uniform(rng, -1.0, 1.0);
      break;
  }
  return s;
}

EnvState env_reset(const EnvSpec& spec, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xe5u);
  return env_reset(spec, rng);
}

StepResult env_step(const EnvSpec& spec, const EnvState& state, const RealVec& action) {
  if (action.size() != spec.action_dim) throw ShapeError("env_step: action has wrong dimension");
  if (!action.allFinite()) throw NumericError("env_step: non-finite action");
  if (state.t >= spec.episode_len) throw std::logic_error("env_step: episode already finished");
  const RealVec a = action.cwiseMax(-1.0).cwiseMin(1.0);
  StepResult r;
  r.next = state;
  for (int k = 0; k < spec.action_repeat && r.next.t < spec.episode_len; ++k) {
    physics_tick(spec, r.next.q, a);
    r.next.t += 1;
    r.reward += tick_reward(spec, r.next.q);
  }
  r.done = r.next.t >= spec.episode_len;
  return r;
}

RealVec observe(const EnvSpec& spec, const EnvState& state) {
  const RealVec& q = state.q;
  RealVec obs(spec.state_dim);
  switch (spec.kind) {
    case EnvKind::kPendulum:
      obs << std::cos(q(0)), std::sin(q(0)), q(1) / spec.physics.max_speed;
      break;
    case EnvKind::kReacher: {
      double x = 0.0;
      double y = 0.0;
      fingertip(q, x, y);
      obs << std::cos(q(0)), std::sin(q(0)), std::cos(q(1)), std::sin(q(1)), q(2) / spec.physics.max_speed,
          q(3) / spec.physics.max_speed, q(4) - x, q(5) - y;
      break;
    }
    case EnvKind::kPointMass:
      obs << q(0), q(1), q(2), q(3);
      break;
  }
  return obs;
}

double pendulum_energy(const EnvSpec& spec, const EnvState& state) {
  const PhysicsConstants& c = spec.physics;
  const double kinetic = 0.5 * c.mass * c.length * c.length * state.q(1) * state.q(1);
  const double potential = c.mass * c.gravity * c.length * std::cos(state.q(0));
  return kinetic + potential;
}

Rollout rollout(const EnvSpec& spec, const Policy& policy, std::uint64_t seed, int max_steps) {
  Rollout out;
  EnvState state = env_reset(spec, seed);
  const int limit = max_steps > 0 ? std::min(max_steps, spec.control_steps()) : spec.control_steps();
  out.steps.reserve(static_cast<std::size_t>(limit));
  RealVec obs = observe(spec, state);
  for (int i = 0; i < limit; ++i) {
    RealVec action = policy(obs).cwiseMax(-1.0).cwiseMin(1.0);
    StepResult r = env_step(spec, state, action);
    RealVec next_obs = observe(spec, r.next);
    out.total_reward += r.reward;
    out.steps.push_back({obs, action, r.reward, next_obs, r.done});
    state = std::move(r.next);
    obs = std::move(next_obs);
    if (out.steps.back().done) break;
  }
  return out;
}

}  // namespace varlab

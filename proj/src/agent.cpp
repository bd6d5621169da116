#include "varlab/agent.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace varlab {

namespace {

RealMat tanh_of(const RealMat& x) { return x.array().tanh().matrix(); }

RealMat stack_rows(const RealMat& top, const RealMat& bottom) {
  RealMat out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

PenultMode penult_for(bool pnorm, bool layer_norm, bool spectral) {
  if (pnorm) return PenultMode::kPnorm;
  if (layer_norm) return PenultMode::kLayerNorm;
  if (spectral) return PenultMode::kSpectral;
  return PenultMode::kNone;
}

std::vector<int> head_sizes(const AgentConfig& cfg, int in, int out) {
  std::vector<int> sizes{in};
  for (int i = 0; i < cfg.hidden_layers; ++i) sizes.push_back(cfg.hidden_dim);
  sizes.push_back(out);
  return sizes;
}

struct CriticPass {
  ForwardResult trunk;
  RealMat feat;
  ForwardResult q1;
  ForwardResult q2;
};

CriticPass critic_forward(const CriticNet& critic, const RealMat& states, const RealMat& actions) {
  CriticPass p;
  p.trunk = mlp_forward(critic.trunk, states);
  p.feat = tanh_of(p.trunk.output);
  const RealMat input = stack_rows(p.feat, actions);
  p.q1 = mlp_forward(critic.q1, input);
  p.q2 = mlp_forward(critic.q2, input);
  return p;
}

struct ActorPass {
  ForwardResult trunk;
  RealMat feat;
  ForwardResult head;
};

ActorPass actor_forward(const ActorNet& actor, const RealMat& states) {
  ActorPass p;
  p.trunk = mlp_forward(actor.trunk, states);
  p.feat = tanh_of(p.trunk.output);
  p.head = mlp_forward(actor.head, p.feat);
  return p;
}

// Backprop of a_pre gradients into the actor's head and trunk.
void actor_backward(const ActorNet& actor, const ActorPass& pass, const RealMat& d_pre, GradBuffer& trunk,
                    GradBuffer& head) {
  BackwardResult hb = mlp_backward(actor.head, pass.head.tape, d_pre);
  RealMat d_trunk = hb.input_grad.cwiseProduct((1.0 - pass.feat.array().square()).matrix());
  BackwardResult tb = mlp_backward(actor.trunk, pass.trunk.tape, d_trunk);
  trunk = std::move(tb.grads);
  head = std::move(hb.grads);
}

// Gradient of sum_j <g_j, x_j / |x_j|> with respect to x, per column.
RealMat normalize_backward(const RealMat& x, const RealVec& norms, const RealMat& g) {
  RealMat out(g.rows(), g.cols());
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    const double n = std::max(norms(j), kNormClamp);
    if (norms(j) < kNormClamp) {
      out.col(j) = g.col(j) / n;
      continue;
    }
    const RealVec y = x.col(j) / n;
    out.col(j) = (g.col(j) - y * y.dot(g.col(j))) / n;
  }
  return out;
}

RealMat normalize_columns(const RealMat& x, RealVec& norms) {
  norms = x.colwise().norm().transpose();
  RealMat out = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) /= std::max(norms(j), kNormClamp);
  return out;
}

std::string dump_vec(const RealVec& v) {
  std::ostringstream os;
  os.precision(17);
  os << "(";
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v(i);
  os << ")";
  return os.str();
}

}  // namespace

void AgentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("AgentConfig: " + msg); };
  if (!(lr >= 0.0)) fail("lr must be >= 0");
  if (!(tau >= 0.0 && tau <= 1.0)) fail("tau must lie in [0, 1]");
  if (update_every < 1) fail("update_every must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
  if (n_step < 1) fail("n_step must be >= 1");
  if (batch < 1) fail("batch must be >= 1");
  if (seed_frames < 0) fail("seed_frames must be >= 0");
  if (noise_sched.duration <= 0) fail("noise schedule duration must be positive");
  if (!(noise_clip >= 0.0)) fail("noise_clip must be >= 0");
  if (!(penalty_lambda >= 0.0)) fail("penalty_lambda must be >= 0");
  if (warmup_steps < 0) fail("warmup_steps must be >= 0");
  if (grad_clip && !(*grad_clip > 0.0)) fail("grad_clip must be positive");
  if (scale_down && !(*scale_down > 0.0)) fail("scale_down must be positive");
  if (ssl_steps < 0) fail("ssl_steps must be >= 0");
  if (feature_dim < 2 || hidden_dim < 2 || hidden_layers < 1 || ssl_hidden < 1) fail("network sizes too small");
  if (replay_capacity < static_cast<std::size_t>(batch)) fail("replay_capacity must be >= batch");
  if (spectral_iters < 1) fail("spectral_iters must be >= 1");
  if (int(actor_pnorm) + int(layer_norm) + int(spectral) > 1) fail("actor: choose one of pnorm, layer_norm, spectral");
  if (int(critic_pnorm) + int(layer_norm) + int(spectral) > 1) fail("critic: choose one of pnorm, layer_norm, spectral");
}

ActorNet make_actor(const AgentConfig& cfg, int state_dim, int action_dim, Rng& rng) {
  ActorNet net;
  net.trunk = init_mlp({{state_dim, cfg.feature_dim}, Activation::kTanh}, rng);
  MlpShape head{head_sizes(cfg, cfg.feature_dim, action_dim), Activation::kRelu,
                penult_for(cfg.actor_pnorm, cfg.layer_norm, cfg.spectral),
                cfg.output_norm ? OutputMode::kOutputNorm : OutputMode::kIdentity};
  net.head = init_mlp(head, rng);
  if (cfg.scale_down) scale_down_init(net.head, *cfg.scale_down);
  return net;
}

CriticNet make_critic(const AgentConfig& cfg, int state_dim, int action_dim, Rng& rng) {
  CriticNet net;
  net.trunk = init_mlp({{state_dim, cfg.feature_dim}, Activation::kTanh}, rng);
  MlpShape head{head_sizes(cfg, cfg.feature_dim + action_dim, 1), Activation::kRelu,
                penult_for(cfg.critic_pnorm, cfg.layer_norm, cfg.spectral), OutputMode::kIdentity};
  net.q1 = init_mlp(head, rng);
  net.q2 = init_mlp(head, rng);
  if (cfg.scale_down) {
    scale_down_init(net.q1, *cfg.scale_down);
    scale_down_init(net.q2, *cfg.scale_down);
  }
  return net;
}

SslHeads make_ssl_heads(const AgentConfig& cfg, const CriticNet& critic, Rng& rng) {
  SslHeads heads;
  heads.head = init_mlp({{cfg.feature_dim, cfg.ssl_hidden, cfg.feature_dim}, Activation::kRelu}, rng);
  heads.target_trunk = critic.trunk;
  return heads;
}

RealMat actor_pre_activation(const ActorNet& actor, const RealMat& states) {
  return mlp_predict(actor.head, tanh_of(mlp_predict(actor.trunk, states)));
}

RealVec actor_pre_activation(const ActorNet& actor, const RealVec& state) {
  return actor_pre_activation(actor, RealMat(state)).col(0);
}

QValues critic_values(const CriticNet& critic, const RealMat& states, const RealMat& actions) {
  const RealMat input = stack_rows(tanh_of(mlp_predict(critic.trunk, states)), actions);
  return {mlp_predict(critic.q1, input).row(0).transpose(), mlp_predict(critic.q2, input).row(0).transpose()};
}

RealVec bootstrap_value(const RealVec& q1, const RealVec& q2, bool asym_clip) {
  if (q1.size() != q2.size()) throw ShapeError("bootstrap_value: length mismatch");
  if (asym_clip) return 0.5 * (q1 + q2);
  return q1.cwiseMin(q2);
}

RealVec td_target(const CriticNet& critic_target, const ActorNet& policy, const Batch& batch, const AgentConfig& cfg,
                  double sigma, Rng& noise_rng) {
  RealMat action = tanh_of(actor_pre_activation(policy, batch.s_n));
  for (Eigen::Index j = 0; j < action.cols(); ++j) {
    for (Eigen::Index i = 0; i < action.rows(); ++i) {
      const double eps = std::clamp(sigma * standard_normal(noise_rng), -cfg.noise_clip, cfg.noise_clip);
      action(i, j) = std::clamp(action(i, j) + eps, -1.0, 1.0);
    }
  }
  const QValues q = critic_values(critic_target, batch.s_n, action);
  const RealVec boot = bootstrap_value(q.q1, q.q2, cfg.asym_clip);
  return batch.r_sum + batch.disc.cwiseProduct(boot);
}

CriticGrads critic_loss_and_grad(const CriticNet& critic, const RealMat& states, const RealMat& actions,
                                 const RealVec& targets) {
  const CriticPass pass = critic_forward(critic, states, actions);
  const auto n = static_cast<double>(states.cols());
  CriticGrads out;
  out.q1_values = pass.q1.output.row(0).transpose();
  out.q2_values = pass.q2.output.row(0).transpose();
  const RealVec e1 = out.q1_values - targets;
  const RealVec e2 = out.q2_values - targets;
  out.loss = (e1.squaredNorm() + e2.squaredNorm()) / n;

  BackwardResult b1 = mlp_backward(critic.q1, pass.q1.tape, RealMat((2.0 / n) * e1.transpose()));
  BackwardResult b2 = mlp_backward(critic.q2, pass.q2.tape, RealMat((2.0 / n) * e2.transpose()));
  const Eigen::Index fd = pass.feat.rows();
  RealMat d_feat = b1.input_grad.topRows(fd) + b2.input_grad.topRows(fd);
  d_feat.array() *= 1.0 - pass.feat.array().square();
  BackwardResult bt = mlp_backward(critic.trunk, pass.trunk.tape, d_feat);
  out.trunk = std::move(bt.grads);
  out.q1 = std::move(b1.grads);
  out.q2 = std::move(b2.grads);
  return out;
}

ActorGrads actor_loss_and_grad(const ActorNet& actor, const CriticNet& critic, const RealMat& states, double lambda,
                               bool split_paths) {
  const ActorPass ap = actor_forward(actor, states);
  const RealMat& a_pre = ap.head.output;
  const RealMat action = tanh_of(a_pre);
  const CriticPass cp = critic_forward(critic, states, action);
  const auto n = static_cast<double>(states.cols());
  const Eigen::Index b = states.cols();

  RealMat d_q1 = RealMat::Zero(1, b);
  RealMat d_q2 = RealMat::Zero(1, b);
  double q_sum = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const double q1 = cp.q1.output(0, j);
    const double q2 = cp.q2.output(0, j);
    if (q1 <= q2) {
      d_q1(0, j) = -1.0 / n;
      q_sum += q1;
    } else {
      d_q2(0, j) = -1.0 / n;
      q_sum += q2;
    }
  }
  const BackwardResult b1 = mlp_backward(critic.q1, cp.q1.tape, d_q1, false);
  const BackwardResult b2 = mlp_backward(critic.q2, cp.q2.tape, d_q2, false);
  const Eigen::Index ad = action.rows();
  RealMat d_pre_q = b1.input_grad.bottomRows(ad) + b2.input_grad.bottomRows(ad);
  d_pre_q.array() *= 1.0 - action.array().square();
  const RealMat d_pre_pen = (2.0 * lambda / n) * a_pre;

  ActorGrads out;
  out.loss = -q_sum / n + lambda * a_pre.squaredNorm() / n;
  out.avg_abs_action = action.cwiseAbs().mean();
  out.pnorm_clamped = ap.head.tape.pnorm_clamped;
  if (split_paths) {
    GradBuffer qt, qh, pt, ph;
    actor_backward(actor, ap, d_pre_q, qt, qh);
    actor_backward(actor, ap, d_pre_pen, pt, ph);
    out.q_path_norm = std::sqrt(qt.squared_norm() + qh.squared_norm());
    out.penalty_path_norm = std::sqrt(pt.squared_norm() + ph.squared_norm());
  }
  actor_backward(actor, ap, d_pre_q + d_pre_pen, out.trunk, out.head);
  return out;
}

double actor_loss(const ActorNet& actor, const CriticNet& critic, const RealMat& states, double lambda) {
  const RealMat a_pre = actor_pre_activation(actor, states);
  const QValues q = critic_values(critic, states, tanh_of(a_pre));
  const auto n = static_cast<double>(states.cols());
  return -q.q1.cwiseMin(q.q2).sum() / n + lambda * a_pre.squaredNorm() / n;
}

SslGrads ssl_loss_and_grad(const MlpParams& trunk, const SslHeads& heads, const RealMat& view1, const RealMat& view2) {
  if (view1.rows() != view2.rows() || view1.cols() != view2.cols()) throw ShapeError("ssl views differ in shape");
  const Eigen::Index b = view1.cols();
  RealMat views(view1.rows(), 2 * b);
  views << view1, view2;
  // Online view k is matched with the target embedding of the other view.
  RealMat swapped(view1.rows(), 2 * b);
  swapped << view2, view1;

  const ForwardResult tf = mlp_forward(trunk, views);
  const RealMat feat = tanh_of(tf.output);
  const ForwardResult hf = mlp_forward(heads.head, feat);
  RealVec p_norms;
  RealVec t_norms;
  const RealMat zp = normalize_columns(hf.output, p_norms);
  const RealMat zt = normalize_columns(tanh_of(mlp_predict(heads.target_trunk, swapped)), t_norms);

  const RealMat diff = zp - zt;
  SslGrads out;
  out.loss = 0.5 * diff.squaredNorm() / static_cast<double>(b);
  const RealMat d_zp = diff / static_cast<double>(b);
  const RealMat d_p = normalize_backward(hf.output, p_norms, d_zp);
  BackwardResult hb = mlp_backward(heads.head, hf.tape, d_p);
  RealMat d_trunk = hb.input_grad.cwiseProduct((1.0 - feat.array().square()).matrix());
  BackwardResult tb = mlp_backward(trunk, tf.tape, d_trunk);
  out.trunk = std::move(tb.grads);
  out.head = std::move(hb.grads);
  return out;
}

Agent::Agent(const AgentConfig& cfg, const EnvSpec& env, const RngKeys& keys)
    : cfg_(cfg),
      env_(env),
      init_rng_(make_rng(keys.shared, 1)),
      seed_action_rng_(make_rng(keys.shared, 2)),
      seed_env_rng_(make_rng(keys.shared, 3)),
      env_rng_(make_rng(keys.run, 4)),
      noise_rng_(make_rng(keys.run, 5)),
      sample_rng_(make_rng(keys.run, 6)),
      buffer_(cfg.replay_capacity, env.state_dim, env.action_dim, cfg.n_step, cfg.gamma) {
  cfg_.validate();
  actor_ = make_actor(cfg_, env_.state_dim, env_.action_dim, init_rng_);
  critic_ = make_critic(cfg_, env_.state_dim, env_.action_dim, init_rng_);
  actor_target_ = actor_;
  critic_target_ = critic_;
  if (cfg_.ssl_steps > 0) ssl_ = make_ssl_heads(cfg_, critic_, init_rng_);
  actor_trunk_opt_ = AdamState::for_params(actor_.trunk);
  actor_head_opt_ = AdamState::for_params(actor_.head);
  critic_trunk_opt_ = AdamState::for_params(critic_.trunk);
  critic_q1_opt_ = AdamState::for_params(critic_.q1);
  critic_q2_opt_ = AdamState::for_params(critic_.q2);
  if (ssl_) ssl_head_opt_ = AdamState::for_params(ssl_->head);
}

RealVec select_action(const ActorNet& actor, const RealVec& obs, double sigma, ActionMode mode, Rng& noise_rng) {
  RealVec a_pre;
  try {
    a_pre = actor_pre_activation(actor, obs);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + "; state " + dump_vec(obs));
  }
  RealVec a = a_pre.array().tanh().matrix();
  if (!a.allFinite()) {
    throw NumericError("actor produced a non-finite action; state " + dump_vec(obs) + ", a_pre " + dump_vec(a_pre));
  }
  if (mode == ActionMode::kEval) return a;
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = std::clamp(a(i) + sigma * standard_normal(noise_rng), -1.0, 1.0);
  return a;
}

RealVec Agent::eval_action(const RealVec& obs) const {
  Rng unused(0);
  return select_action(actor_, obs, 0.0, ActionMode::kEval, unused);
}

RealVec Agent::act(const RealVec& obs, std::int64_t step, ActionMode mode) {
  if (step < 0) throw std::invalid_argument("Agent::act: negative step");
  if (mode == ActionMode::kExplore && step < cfg_.seed_frames) {
    RealVec a(env_.action_dim);
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = uniform(seed_action_rng_, -1.0, 1.0);
    return a;
  }
  const double sigma = mode == ActionMode::kEval ? 0.0 : cfg_.noise_sched.value(step);
  return select_action(actor_, obs, sigma, mode, noise_rng_);
}

bool Agent::training_gate(std::int64_t step) const {
  if (step < cfg_.seed_frames) return false;
  if ((step - cfg_.seed_frames + 1) % cfg_.update_every != 0) return false;
  if (cfg_.nz_gate && !buffer_.any_nonzero_reward()) return false;
  return true;
}

std::optional<UpdateMetrics> Agent::step(std::int64_t step) {
  if (need_reset_) {
    env_state_ = env_reset(env_, step < cfg_.seed_frames ? seed_env_rng_ : env_rng_);
    need_reset_ = false;
  }
  const RealVec obs = observe(env_, env_state_);
  const RealVec action = act(obs, step, ActionMode::kExplore);
  StepResult r = env_step(env_, env_state_, action);
  const RealVec next_obs = observe(env_, r.next);
  buffer_.add(obs, action, r.reward, next_obs, r.done);
  env_state_ = std::move(r.next);
  if (r.done) need_reset_ = true;
  if (training_gate(step) && buffer_.num_assembled() >= static_cast<std::size_t>(cfg_.batch)) return update(step);
  return std::nullopt;
}

double Agent::current_lr() const {
  if (cfg_.warmup_steps <= 0) return cfg_.lr;
  return cfg_.lr * LinearSchedule{0.0, 1.0, cfg_.warmup_steps}.value(num_updates_);
}

UpdateMetrics Agent::update(std::int64_t step) {
  UpdateMetrics m;
  const Batch batch = buffer_.sample(static_cast<std::size_t>(cfg_.batch), sample_rng_);
  const auto n = static_cast<double>(batch.size());

  if (cfg_.spectral) {
    for (MlpParams* p : {&actor_.head, &critic_.q1, &critic_.q2, &critic_target_.q1, &critic_target_.q2}) {
      spectral_power_step(*p, cfg_.spectral_iters);
    }
  }

  const double sigma = cfg_.noise_sched.value(step);
  const RealVec y = td_target(critic_target_, cfg_.use_actor_target ? actor_target_ : actor_, batch, cfg_, sigma,
                              noise_rng_);
  m.fnz_qtarget = (y.array().abs() > kNonzeroTarget).cast<double>().mean();
  m.fnz_reward = (batch.r_sum.array() != 0.0).cast<double>().mean();

  CriticGrads cg = critic_loss_and_grad(critic_, batch.s, batch.a, y);
  if (!std::isfinite(cg.loss)) throw NumericError("critic loss is not finite at step " + std::to_string(step));
  m.critic_loss = cg.loss;
  m.avg_q = 0.5 * (cg.q1_values + cg.q2_values).mean();

  std::optional<SslGrads> sg;
  if (ssl_ && step < cfg_.ssl_steps) {
    RealMat v1 = batch.s;
    RealMat v2 = batch.s_next;
    for (RealMat* v : {&v1, &v2}) {
      for (Eigen::Index j = 0; j < v->cols(); ++j)
        for (Eigen::Index i = 0; i < v->rows(); ++i) (*v)(i, j) += cfg_.ssl_view_noise * standard_normal(noise_rng_);
    }
    sg = ssl_loss_and_grad(critic_.trunk, *ssl_, v1, v2);
    m.ssl_loss = sg->loss;
    cg.trunk += sg->trunk;
  }

  if (cfg_.grad_clip) {
    GradBuffer* critic_grads[] = {&cg.trunk, &cg.q1, &cg.q2};
    clip_grad_norm(critic_grads, *cfg_.grad_clip);
    if (sg) clip_grad_norm(sg->head, *cfg_.grad_clip);
  }

  const double lr = current_lr();
  adam_step(critic_trunk_opt_, critic_.trunk, cg.trunk, lr);
  adam_step(critic_q1_opt_, critic_.q1, cg.q1, lr);
  adam_step(critic_q2_opt_, critic_.q2, cg.q2, lr);
  if (sg) adam_step(ssl_head_opt_, ssl_->head, sg->head, lr);

  const QValues after = critic_values(critic_, batch.s, batch.a);
  m.delta_q = 0.5 * ((after.q1 - cg.q1_values).cwiseAbs().sum() + (after.q2 - cg.q2_values).cwiseAbs().sum()) / n;

  soft_update(critic_target_.trunk, critic_.trunk, cfg_.tau);
  soft_update(critic_target_.q1, critic_.q1, cfg_.tau);
  soft_update(critic_target_.q2, critic_.q2, cfg_.tau);
  if (ssl_) soft_update(ssl_->target_trunk, critic_.trunk, cfg_.tau);

  ActorGrads ag = actor_loss_and_grad(actor_, critic_, batch.s, cfg_.penalty_lambda);
  if (!std::isfinite(ag.loss)) throw NumericError("actor loss is not finite at step " + std::to_string(step));
  m.actor_loss = ag.loss;
  m.avg_abs_action = ag.avg_abs_action;
  m.pnorm_clamped = ag.pnorm_clamped;
  m.actor_grad_norm = std::sqrt(ag.trunk.squared_norm() + ag.head.squared_norm());
  if (cfg_.grad_clip) {
    GradBuffer* actor_grads[] = {&ag.trunk, &ag.head};
    clip_grad_norm(actor_grads, *cfg_.grad_clip);
  }
  adam_step(actor_trunk_opt_, actor_.trunk, ag.trunk, lr);
  adam_step(actor_head_opt_, actor_.head, ag.head, lr);
  if (cfg_.use_actor_target) {
    soft_update(actor_target_.trunk, actor_.trunk, cfg_.tau);
    soft_update(actor_target_.head, actor_.head, cfg_.tau);
  }

  ++num_updates_;
  last_batch_ = batch;
  last_targets_ = y;
  return m;
}

}  // namespace varlab

#include "varlab/diffmath.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

namespace varlab {

namespace {

bool all_finite(const RealMat& m) { return m.allFinite(); }

RealMat apply_activation(Activation act, const RealMat& z) {
  if (act == Activation::kRelu) return z.cwiseMax(0.0);
  return z.array().tanh().matrix();
}

// d activation / d z, expressed through z and the activation output h.
void activation_backward(Activation act, const RealMat& z, const RealMat& h, RealMat& g) {
  if (act == Activation::kRelu) {
    g.array() *= (z.array() > 0.0).cast<double>();
  } else {
    g.array() *= 1.0 - h.array().square();
  }
}

void check_same_shape(const MlpParams& a, const MlpParams& b, const char* what) {
  if (a.layers.size() != b.layers.size()) throw ShapeError(std::string(what) + ": layer count mismatch");
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].weight.rows() != b.layers[l].weight.rows() ||
        a.layers[l].weight.cols() != b.layers[l].weight.cols() ||
        a.layers[l].bias.size() != b.layers[l].bias.size()) {
      throw ShapeError(std::string(what) + ": shape mismatch at layer " + std::to_string(l));
    }
  }
}

std::uint64_t mix(std::uint64_t h, double x) {
  h ^= std::bit_cast<std::uint64_t>(x) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

}  // namespace

std::size_t MlpParams::num_params() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weight.size() + layer.bias.size();
  return n;
}

void MlpParams::validate() const {
  if (layers.empty()) throw ShapeError("mlp has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].bias.size() != layers[l].weight.rows()) {
      throw ShapeError("bias/weight mismatch at layer " + std::to_string(l));
    }
    if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows()) {
      throw ShapeError("layers " + std::to_string(l - 1) + " and " + std::to_string(l) + " do not chain");
    }
  }
  if (penult_mode != PenultMode::kNone && layers.size() < 2) {
    throw ShapeError("penultimate normalization needs at least one hidden layer");
  }
  if (penult_mode == PenultMode::kLayerNorm && layers[layers.size() - 2].weight.rows() < 2) {
    throw ShapeError("layer norm needs at least two penultimate features");
  }
  if (penult_mode == PenultMode::kSpectral &&
      power_vec.size() != layers[layers.size() - 2].weight.cols()) {
    throw ShapeError("spectral mode needs a power vector matching the penultimate weight");
  }
}

GradBuffer GradBuffer::zeros_like(const MlpParams& params) {
  GradBuffer g;
  g.layers.reserve(params.layers.size());
  for (const auto& layer : params.layers) {
    g.layers.push_back({RealMat::Zero(layer.weight.rows(), layer.weight.cols()), RealVec::Zero(layer.bias.size())});
  }
  return g;
}

double GradBuffer::squared_norm() const {
  double s = 0.0;
  for (const auto& layer : layers) s += layer.weight.squaredNorm() + layer.bias.squaredNorm();
  return s;
}

double GradBuffer::global_norm() const { return std::sqrt(squared_norm()); }

void GradBuffer::scale(double factor) {
  for (auto& layer : layers) {
    layer.weight *= factor;
    layer.bias *= factor;
  }
}

GradBuffer& GradBuffer::operator+=(const GradBuffer& other) {
  if (other.layers.size() != layers.size()) throw ShapeError("gradient buffers differ in layer count");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight += other.layers[l].weight;
    layers[l].bias += other.layers[l].bias;
  }
  return *this;
}

double dot(const GradBuffer& a, const GradBuffer& b) {
  double s = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    s += a.layers[l].weight.cwiseProduct(b.layers[l].weight).sum();
    s += a.layers[l].bias.dot(b.layers[l].bias);
  }
  return s;
}

MlpParams init_mlp(const MlpShape& shape, Rng& rng) {
  if (shape.sizes.size() < 2) throw ShapeError("mlp shape needs input and output sizes");
  MlpParams params;
  params.hidden_activation = shape.hidden_activation;
  params.penult_mode = shape.penult_mode;
  params.output_mode = shape.output_mode;
  const std::size_t n_layers = shape.sizes.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int in = shape.sizes[l];
    const int out = shape.sizes[l + 1];
    const bool hidden = l + 1 < n_layers;
    const double gain = (hidden && shape.hidden_activation == Activation::kRelu) ? std::sqrt(2.0) : 1.0;
    const int big = std::max(in, out);
    const int small = std::min(in, out);
    RealMat a(big, small);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = standard_normal(rng);
    Eigen::HouseholderQR<RealMat> qr(a);
    RealMat q = qr.householderQ() * RealMat::Identity(big, small);
    const RealMat r = qr.matrixQR();
    for (int k = 0; k < small; ++k) {
      if (r(k, k) < 0.0) q.col(k) *= -1.0;
    }
    Layer layer;
    layer.weight = out >= in ? RealMat(q) : RealMat(q.transpose());
    layer.weight *= gain;
    layer.bias = RealVec::Zero(out);
    params.layers.push_back(std::move(layer));
  }
  if (shape.penult_mode == PenultMode::kSpectral && n_layers >= 2) {
    const auto in = params.layers[n_layers - 2].weight.cols();
    RealVec v(in);
    for (Eigen::Index i = 0; i < in; ++i) v(i) = standard_normal(rng);
    params.power_vec = v / std::max(v.norm(), kNormClamp);
  }
  params.validate();
  return params;
}

std::uint64_t params_fingerprint(const MlpParams& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& layer : params.layers) {
    const double* w = layer.weight.data();
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) h = mix(h, w[i]);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) h = mix(h, layer.bias(i));
  }
  for (Eigen::Index i = 0; i < params.power_vec.size(); ++i) h = mix(h, params.power_vec(i));
  return h;
}

double spectral_sigma(const RealMat& weight, const RealVec& power_vec) {
  return std::max((weight * power_vec).norm(), kNormClamp);
}

namespace {

ForwardResult forward_impl(const MlpParams& params, const RealMat& input, bool record) {
  params.validate();
  if (input.rows() != params.input_dim()) {
    throw ShapeError("input has " + std::to_string(input.rows()) + " rows, network expects " +
                     std::to_string(params.input_dim()));
  }
  const std::size_t n_layers = params.layers.size();
  const std::size_t penult = n_layers >= 2 ? n_layers - 2 : n_layers;
  ForwardResult result;
  Tape& tape = result.tape;
  tape.batch = input.cols();
  if (record) {
    tape.inputs.reserve(n_layers);
    tape.fingerprint = params_fingerprint(params);
  }

  RealMat x = input;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Layer& layer = params.layers[l];
    RealMat z;
    if (l == penult && params.penult_mode == PenultMode::kSpectral) {
      const RealVec wv = layer.weight * params.power_vec;
      const double sigma = std::max(wv.norm(), kNormClamp);
      tape.spectral_sigma = sigma;
      tape.spectral_u = wv / sigma;
      z.noalias() = (layer.weight / sigma) * x;
    } else {
      z.noalias() = layer.weight * x;
    }
    z.colwise() += layer.bias;
    if (record) tape.inputs.push_back(x);

    if (l + 1 == n_layers) {
      if (params.output_mode == OutputMode::kOutputNorm) {
        RealVec norms = z.colwise().norm().transpose();
        RealMat y = z;
        for (Eigen::Index j = 0; j < z.cols(); ++j) y.col(j) /= std::max(norms(j), kNormClamp);
        if (record) {
          tape.raw_output = z;
          tape.output_norms = std::move(norms);
        }
        result.output = std::move(y);
      } else {
        if (record) tape.raw_output = z;
        result.output = std::move(z);
      }
      break;
    }

    RealMat h = apply_activation(params.hidden_activation, z);
    if (l == penult && params.penult_mode == PenultMode::kPnorm) {
      RealVec norms = h.colwise().norm().transpose();
      x = h;
      for (Eigen::Index j = 0; j < h.cols(); ++j) {
        if (norms(j) < kNormClamp) ++tape.pnorm_clamped;
        x.col(j) /= std::max(norms(j), kNormClamp);
      }
      if (record) tape.penult_scale = std::move(norms);
    } else if (l == penult && params.penult_mode == PenultMode::kLayerNorm) {
      const double n = static_cast<double>(h.rows());
      RealVec means = h.colwise().mean().transpose();
      RealVec inv_std(h.cols());
      x.resize(h.rows(), h.cols());
      for (Eigen::Index j = 0; j < h.cols(); ++j) {
        const auto centered = (h.col(j).array() - means(j));
        const double var = centered.square().sum() / n;
        inv_std(j) = 1.0 / std::sqrt(var + kLayerNormEps);
        x.col(j) = (centered * inv_std(j)).matrix();
      }
      if (record) {
        tape.penult_mean = std::move(means);
        tape.penult_scale = std::move(inv_std);
      }
    } else {
      x = h;
    }
    if (record) {
      tape.pre_acts.push_back(std::move(z));
      tape.hidden_out.push_back(std::move(h));
    }
  }
  if (!all_finite(result.output)) throw NumericError("mlp_forward produced a non-finite output");
  return result;
}

}  // namespace

ForwardResult mlp_forward(const MlpParams& params, const RealMat& input) {
  return forward_impl(params, input, true);
}

RealVec mlp_forward(const MlpParams& params, const RealVec& input) {
  return forward_impl(params, RealMat(input), false).output.col(0);
}

RealMat mlp_predict(const MlpParams& params, const RealMat& input) {
  return forward_impl(params, input, false).output;
}

BackwardResult mlp_backward(const MlpParams& params, const Tape& tape, const RealMat& output_grad,
                            bool want_param_grads) {
  const std::size_t n_layers = params.layers.size();
  if (tape.inputs.size() != n_layers || tape.pre_acts.size() + 1 != n_layers) {
    throw ShapeError("tape does not match network depth");
  }
  if (tape.fingerprint != params_fingerprint(params)) {
    throw ShapeError("stale tape: parameters changed since the forward pass");
  }
  if (output_grad.rows() != params.output_dim() || output_grad.cols() != tape.batch) {
    throw ShapeError("output gradient shape does not match the forward pass");
  }
  const std::size_t penult = n_layers - 2;  // wraps for single-layer nets; never matched then

  BackwardResult result;
  if (want_param_grads) result.grads.layers.resize(n_layers);

  RealMat g = output_grad;
  if (params.output_mode == OutputMode::kOutputNorm) {
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      const double n = tape.output_norms(j);
      if (n < kNormClamp) {
        g.col(j) /= kNormClamp;
        continue;
      }
      const RealVec y = tape.raw_output.col(j) / n;
      g.col(j) = (g.col(j) - y * y.dot(g.col(j))) / n;
    }
  }

  for (std::size_t l = n_layers; l-- > 0;) {
    const Layer& layer = params.layers[l];
    const bool spectral = n_layers >= 2 && l == penult && params.penult_mode == PenultMode::kSpectral;
    const double sigma = spectral ? tape.spectral_sigma : 1.0;
    if (want_param_grads) {
      Layer& out = result.grads.layers[l];
      RealMat dw_eff;
      dw_eff.noalias() = g * tape.inputs[l].transpose();
      if (spectral) {
        const double inner = dw_eff.cwiseProduct(layer.weight).sum();
        out.weight = dw_eff / sigma;
        if (sigma > kNormClamp) out.weight -= (inner / (sigma * sigma)) * tape.spectral_u * params.power_vec.transpose();
      } else {
        out.weight = std::move(dw_eff);
      }
      out.bias = g.rowwise().sum();
    }
    RealMat g_in;
    if (spectral) {
      g_in.noalias() = (layer.weight.transpose() / sigma) * g;
    } else {
      g_in.noalias() = layer.weight.transpose() * g;
    }
    if (l == 0) {
      result.input_grad = std::move(g_in);
      break;
    }

    const std::size_t hidden = l - 1;
    if (hidden == penult && params.penult_mode == PenultMode::kPnorm) {
      const RealMat& h = tape.hidden_out[hidden];
      for (Eigen::Index j = 0; j < g_in.cols(); ++j) {
        const double n = tape.penult_scale(j);
        if (n < kNormClamp) {
          g_in.col(j) /= kNormClamp;
          continue;
        }
        const RealVec y = h.col(j) / n;
        g_in.col(j) = (g_in.col(j) - y * y.dot(g_in.col(j))) / n;
      }
    } else if (hidden == penult && params.penult_mode == PenultMode::kLayerNorm) {
      const RealMat& h = tape.hidden_out[hidden];
      for (Eigen::Index j = 0; j < g_in.cols(); ++j) {
        const double inv_std = tape.penult_scale(j);
        const RealVec xhat = (h.col(j).array() - tape.penult_mean(j)).matrix() * inv_std;
        const double mean_g = g_in.col(j).mean();
        const double mean_gx = g_in.col(j).dot(xhat) / static_cast<double>(xhat.size());
        g_in.col(j) = inv_std * (g_in.col(j).array() - mean_g - xhat.array() * mean_gx).matrix();
      }
    }
    activation_backward(params.hidden_activation, tape.pre_acts[hidden], tape.hidden_out[hidden], g_in);
    g = std::move(g_in);
  }
  return result;
}

GradBuffer finite_diff_grad(const std::function<double(const MlpParams&)>& f, const MlpParams& params,
                            double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be positive");
  GradBuffer grads = GradBuffer::zeros_like(params);
  MlpParams probe = params;
  auto central = [&](double& slot) {
    const double saved = slot;
    slot = saved + h;
    const double fp = f(probe);
    slot = saved - h;
    const double fm = f(probe);
    slot = saved;
    return (fp - fm) / (2.0 * h);
  };
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    auto& w = probe.layers[l].weight;
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) grads.layers[l].weight(i, j) = central(w(i, j));
    auto& b = probe.layers[l].bias;
    for (Eigen::Index i = 0; i < b.size(); ++i) grads.layers[l].bias(i) = central(b(i));
  }
  return grads;
}

AdamState AdamState::for_params(const MlpParams& params) {
  AdamState s;
  s.m = GradBuffer::zeros_like(params);
  s.v = GradBuffer::zeros_like(params);
  return s;
}

void adam_step(AdamState& state, MlpParams& params, const GradBuffer& grads, double lr) {
  if (lr < 0.0) throw std::invalid_argument("adam_step: negative learning rate");
  if (grads.layers.size() != params.layers.size() || state.m.layers.size() != params.layers.size()) {
    throw ShapeError("adam_step: gradient tree does not match parameters");
  }
  for (std::size_t l = 0; l < grads.layers.size(); ++l) {
    if (!grads.layers[l].weight.allFinite()) {
      throw NumericError("adam_step: non-finite gradient in layer " + std::to_string(l) + " weight");
    }
    if (!grads.layers[l].bias.allFinite()) {
      throw NumericError("adam_step: non-finite gradient in layer " + std::to_string(l) + " bias");
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double eps = state.eps;
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m.array() = b1 * m.array() + (1.0 - b1) * g.array();
    v.array() = b2 * v.array() + (1.0 - b2) * g.array().square();
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < grads.layers.size(); ++l) {
    update(params.layers[l].weight, state.m.layers[l].weight, state.v.layers[l].weight, grads.layers[l].weight);
    update(params.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias, grads.layers[l].bias);
  }
}

double clip_grad_norm(std::span<GradBuffer*> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (const GradBuffer* g : grads) sq += g->squared_norm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (GradBuffer* g : grads) g->scale(factor);
  }
  return norm;
}

double clip_grad_norm(GradBuffer& grads, double max_norm) {
  GradBuffer* one[] = {&grads};
  return clip_grad_norm(std::span<GradBuffer*>(one), max_norm);
}

double LinearSchedule::value(std::int64_t step) const {
  if (duration <= 0) throw std::invalid_argument("LinearSchedule: duration must be positive");
  if (step < 0) throw std::invalid_argument("LinearSchedule: negative step");
  if (step >= duration) return end;
  const double frac = static_cast<double>(step) / static_cast<double>(duration);
  return start + (end - start) * frac;
}

void soft_update(MlpParams& target, const MlpParams& online, double tau) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("soft_update: tau must lie in [0, 1]");
  check_same_shape(target, online, "soft_update");
  if (tau == 0.0) return;
  if (tau == 1.0) {
    for (std::size_t l = 0; l < target.layers.size(); ++l) target.layers[l] = online.layers[l];
    return;
  }
  for (std::size_t l = 0; l < target.layers.size(); ++l) {
    target.layers[l].weight = tau * online.layers[l].weight + (1.0 - tau) * target.layers[l].weight;
    target.layers[l].bias = tau * online.layers[l].bias + (1.0 - tau) * target.layers[l].bias;
  }
}

RealMat spectral_normalize(const RealMat& weight, RealVec& power_vec, int iters) {
  if (iters < 1) throw std::invalid_argument("spectral_normalize: iters must be >= 1");
  if (power_vec.size() != weight.cols()) throw ShapeError("spectral_normalize: power vector length mismatch");
  if (power_vec.norm() == 0.0) throw std::invalid_argument("spectral_normalize: zero power vector");
  if (weight.norm() == 0.0) return weight;
  for (int k = 0; k < iters; ++k) {
    const RealVec u = weight * power_vec;
    RealVec v = weight.transpose() * u;
    const double n = v.norm();
    if (n < kNormClamp) break;
    power_vec = v / n;
  }
  return weight / spectral_sigma(weight, power_vec);
}

void spectral_power_step(MlpParams& params, int iters) {
  if (params.penult_mode != PenultMode::kSpectral) return;
  const RealMat& w = params.layers[params.layers.size() - 2].weight;
  (void)spectral_normalize(w, params.power_vec, iters);
}

RealVec layer_norm_forward(const RealVec& x) {
  if (x.size() < 2) throw ShapeError("layer_norm_forward: need at least two entries");
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  return ((x.array() - mean) / std::sqrt(var + kLayerNormEps)).matrix();
}

RealVec pnorm_forward(const RealVec& x, bool* clamped) {
  const double n = x.norm();
  if (clamped) *clamped = n < kNormClamp;
  return x / std::max(n, kNormClamp);
}

void scale_down_init(MlpParams& params, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("scale_down_init: factor must be positive");
  if (params.layers.empty()) return;
  params.layers.back().weight /= factor;
  params.layers.back().bias /= factor;
}

}  // namespace varlab

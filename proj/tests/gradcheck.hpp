#pragma once

#include "oracles.hpp"

namespace gradcheck {

// Loss sum(G .* y) + lambda * sum ||y_col||^2 over a batch; the quadratic term
// plays the role of the pre-tanh penalty.
inline double loss(const varlab::MlpParams& p, const varlab::RealMat& X, const varlab::RealMat& G, double lambda) {
  const varlab::RealMat y = varlab::mlp_predict(p, X);
  return G.cwiseProduct(y).sum() + lambda * y.squaredNorm();
}

struct Result {
  double param_error = 0.0;
  double input_error = 0.0;
};

// Analytic parameter and input gradients against central differences.
inline Result check(const varlab::MlpParams& p, const varlab::RealMat& X, const varlab::RealMat& G, double lambda,
                    double h = 1e-5) {
  const auto fwd = varlab::mlp_forward(p, X);
  const varlab::RealMat out_grad = G + 2.0 * lambda * fwd.output;
  const auto back = varlab::mlp_backward(p, fwd.tape, out_grad);
  const auto fd = varlab::finite_diff_grad([&](const varlab::MlpParams& q) { return loss(q, X, G, lambda); }, p, h);
  Result r;
  r.param_error = oracle::max_rel_error(back.grads, fd);

  double worst = 0.0;
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    varlab::RealMat xp = X;
    varlab::RealMat xm = X;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double num = (loss(p, xp, G, lambda) - loss(p, xm, G, lambda)) / (2.0 * h);
    const double ana = back.input_grad.data()[i];
    worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}));
  }
  r.input_error = worst;
  return r;
}

}  // namespace gradcheck

#pragma once

// Independent reference implementations used as test oracles. They avoid the
// library code paths they check: plain loops instead of Eigen expressions,
// bisection instead of power iteration, direct formulas instead of helpers.

#include <algorithm>
#include <cmath>
#include <vector>

#include "varlab/diffmath.hpp"
#include "varlab/rng.hpp"

namespace oracle {

using varlab::Activation;
using varlab::MlpParams;
using varlab::OutputMode;
using varlab::PenultMode;

inline double activate(Activation a, double z) { return a == Activation::kRelu ? (z > 0.0 ? z : 0.0) : std::tanh(z); }

// Loop-based forward pass for one input vector.
inline std::vector<double> naive_forward(const MlpParams& p, std::vector<double> x) {
  const std::size_t n = p.layers.size();
  for (std::size_t l = 0; l < n; ++l) {
    const auto& W = p.layers[l].weight;
    const auto& b = p.layers[l].bias;
    double sigma = 1.0;
    if (n >= 2 && l == n - 2 && p.penult_mode == PenultMode::kSpectral) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < W.rows(); ++i) {
        double r = 0.0;
        for (Eigen::Index j = 0; j < W.cols(); ++j) r += W(i, j) * p.power_vec(j);
        s += r * r;
      }
      sigma = std::max(std::sqrt(s), 1e-12);
    }
    std::vector<double> z(static_cast<std::size_t>(W.rows()));
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < W.cols(); ++j) acc += W(i, j) / sigma * x[static_cast<std::size_t>(j)];
      z[static_cast<std::size_t>(i)] = acc + b(i);
    }
    if (l + 1 == n) {
      if (p.output_mode == OutputMode::kOutputNorm) {
        double s = 0.0;
        for (double v : z) s += v * v;
        const double norm = std::max(std::sqrt(s), 1e-12);
        for (double& v : z) v /= norm;
      }
      return z;
    }
    for (double& v : z) v = activate(p.hidden_activation, v);
    if (l == n - 2 && p.penult_mode == PenultMode::kPnorm) {
      double s = 0.0;
      for (double v : z) s += v * v;
      const double norm = std::max(std::sqrt(s), 1e-12);
      for (double& v : z) v /= norm;
    } else if (l == n - 2 && p.penult_mode == PenultMode::kLayerNorm) {
      double mean = 0.0;
      for (double v : z) mean += v;
      mean /= static_cast<double>(z.size());
      double var = 0.0;
      for (double v : z) var += (v - mean) * (v - mean);
      var /= static_cast<double>(z.size());
      for (double& v : z) v = (v - mean) / std::sqrt(var + 1e-5);
    }
    x = z;
  }
  return x;
}

// True when the symmetric matrix A is positive definite (plain Cholesky).
inline bool positive_definite(std::vector<std::vector<double>> A) {
  const std::size_t n = A.size();
  for (std::size_t j = 0; j < n; ++j) {
    double d = A[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= A[j][k] * A[j][k];
    if (!(d > 0.0)) return false;
    const double ljj = std::sqrt(d);
    A[j][j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = A[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= A[i][k] * A[j][k];
      A[i][j] = s / ljj;
    }
  }
  return true;
}

// Largest singular value of W by bisection on lambda such that
// lambda * I - W^T W is positive definite.
inline double top_singular_value(const varlab::RealMat& W) {
  const auto n = static_cast<std::size_t>(W.cols());
  std::vector<std::vector<double>> G(n, std::vector<double>(n, 0.0));
  double frob = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < W.rows(); ++k) s += W(k, static_cast<Eigen::Index>(i)) * W(k, static_cast<Eigen::Index>(j));
      G[i][j] = s;
    }
    frob += G[i][i];
  }
  double lo = 0.0;
  double hi = frob + 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    auto M = G;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) M[i][j] = (i == j ? mid : 0.0) - G[i][j];
    }
    if (positive_definite(M)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return std::sqrt(0.5 * (lo + hi));
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Textbook two-pass unbiased variance.
inline double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Pearson correlation straight from the covariance formula.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// max |a - b| / max(|a|, |b|, floor) over every entry of two gradient trees.
inline double max_rel_error(const varlab::GradBuffer& a, const varlab::GradBuffer& b, double floor = 1e-6) {
  double worst = 0.0;
  auto visit = [&](const auto& x, const auto& y) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double u = x.data()[i];
      const double v = y.data()[i];
      const double denom = std::max({std::abs(u), std::abs(v), floor});
      worst = std::max(worst, std::abs(u - v) / denom);
    }
  };
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    visit(a.layers[l].weight, b.layers[l].weight);
    visit(a.layers[l].bias, b.layers[l].bias);
  }
  return worst;
}

// Random network with nonzero biases so ReLU units are not all symmetric.
inline MlpParams random_mlp(varlab::Rng& rng, const std::vector<int>& sizes, Activation act, PenultMode penult,
                            OutputMode output) {
  varlab::MlpShape shape{sizes, act, penult, output};
  MlpParams p = varlab::init_mlp(shape, rng);
  for (auto& layer : p.layers) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = varlab::uniform(rng, -0.5, 0.5);
  }
  return p;
}

inline varlab::RealMat random_matrix(varlab::Rng& rng, int rows, int cols, double scale = 1.0) {
  varlab::RealMat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * varlab::standard_normal(rng);
  return m;
}

}  // namespace oracle

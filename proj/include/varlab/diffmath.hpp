#pragma once

// Dense MLP math with exact reverse-mode gradients, optimizers and the
// normalization primitives used by the actor and critic networks.
//
// Batched routines take one sample per column: an input of shape
// [in x B] yields an output of shape [out x B].

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "varlab/rng.hpp"

namespace varlab {

using RealVec = Eigen::VectorXd;
using RealMat = Eigen::MatrixXd;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation : std::uint8_t { kRelu = 0, kTanh = 1 };
enum class PenultMode : std::uint8_t { kNone = 0, kPnorm = 1, kLayerNorm = 2, kSpectral = 3 };
enum class OutputMode : std::uint8_t { kIdentity = 0, kOutputNorm = 1 };

inline constexpr double kNormClamp = 1e-12;
inline constexpr double kLayerNormEps = 1e-5;

struct Layer {
  RealMat weight;  // [out x in]
  RealVec bias;    // [out]
};

struct MlpParams {
  std::vector<Layer> layers;
  Activation hidden_activation = Activation::kRelu;
  PenultMode penult_mode = PenultMode::kNone;
  OutputMode output_mode = OutputMode::kIdentity;
  // Power-iteration vector for the penultimate weight (spectral mode only).
  RealVec power_vec;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
  std::size_t num_params() const;
  // Throws ShapeError if layers do not chain or mode requirements are unmet.
  void validate() const;
};

// Gradient tree with the same shapes as an MlpParams.
struct GradBuffer {
  std::vector<Layer> layers;

  static GradBuffer zeros_like(const MlpParams& params);
  double squared_norm() const;
  double global_norm() const;
  void scale(double factor);
  GradBuffer& operator+=(const GradBuffer& other);
};

// Architecture description used by init_mlp.
struct MlpShape {
  std::vector<int> sizes;  // input, hidden..., output
  Activation hidden_activation = Activation::kRelu;
  PenultMode penult_mode = PenultMode::kNone;
  OutputMode output_mode = OutputMode::kIdentity;
};

// Orthogonal weights (gain sqrt(2) ahead of ReLU, 1 otherwise), zero biases.
MlpParams init_mlp(const MlpShape& shape, Rng& rng);

// Everything mlp_backward needs to reproduce the forward pass.
struct Tape {
  std::vector<RealMat> inputs;      // input to each layer (post normalization)
  std::vector<RealMat> pre_acts;    // hidden pre-activations
  std::vector<RealMat> hidden_out;  // activation(pre_act), before normalization
  RealVec penult_scale;             // pnorm: column norms; layer norm: 1/std
  RealVec penult_mean;              // layer norm: column means
  RealMat raw_output;               // final linear output before output norm
  RealVec output_norms;
  double spectral_sigma = 1.0;
  RealVec spectral_u;
  int pnorm_clamped = 0;            // columns whose norm hit kNormClamp
  std::uint64_t fingerprint = 0;
  Eigen::Index batch = 0;
};

struct ForwardResult {
  RealMat output;
  Tape tape;
};

struct BackwardResult {
  GradBuffer grads;
  RealMat input_grad;
};

ForwardResult mlp_forward(const MlpParams& params, const RealMat& input);
RealVec mlp_forward(const MlpParams& params, const RealVec& input);
// Forward without recording a tape.
RealMat mlp_predict(const MlpParams& params, const RealMat& input);

// Throws ShapeError when the tape was produced by different parameters or
// its shapes do not match output_grad. With want_param_grads=false only the
// input gradient is computed (grads is left empty).
BackwardResult mlp_backward(const MlpParams& params, const Tape& tape, const RealMat& output_grad,
                            bool want_param_grads = true);

// Cheap content hash of all weights and biases; used for tape staleness checks.
std::uint64_t params_fingerprint(const MlpParams& params);

// Central differences, one coordinate of every layer weight and bias at a time.
GradBuffer finite_diff_grad(const std::function<double(const MlpParams&)>& f, const MlpParams& params,
                            double h = 1e-5);

struct AdamState {
  GradBuffer m;
  GradBuffer v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const MlpParams& params);
};

// Standard bias-corrected Adam; throws NumericError naming the offending
// block if any gradient entry is non-finite.
void adam_step(AdamState& state, MlpParams& params, const GradBuffer& grads, double lr);

// Rescales all buffers jointly so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<GradBuffer*> grads, double max_norm);
double clip_grad_norm(GradBuffer& grads, double max_norm);

struct LinearSchedule {
  double start = 0.0;
  double end = 0.0;
  std::int64_t duration = 1;

  double value(std::int64_t step) const;
};

inline double schedule_value(const LinearSchedule& sched, std::int64_t step) { return sched.value(step); }

// target <- tau * online + (1 - tau) * target, entrywise over layers.
void soft_update(MlpParams& target, const MlpParams& online, double tau);

// Runs `iters` power iterations on power_vec (updated in place) and returns
// weight / sigma_hat.
RealMat spectral_normalize(const RealMat& weight, RealVec& power_vec, int iters);
// Power iterations on the penultimate weight of a spectral-mode network.
void spectral_power_step(MlpParams& params, int iters);
double spectral_sigma(const RealMat& weight, const RealVec& power_vec);

RealVec layer_norm_forward(const RealVec& x);
RealVec pnorm_forward(const RealVec& x, bool* clamped = nullptr);

// Divides the final layer's weight and bias by factor.
void scale_down_init(MlpParams& params, double factor);

// Sum of an elementwise product over matching layer trees.
double dot(const GradBuffer& a, const GradBuffer& b);

}  // namespace varlab

#pragma once

#include <cstdint>
#include <vector>

#include "varlab/diffmath.hpp"

namespace varlab {

// One assembled n-step sample.
struct Transition {
  RealVec s;
  RealVec a;
  double r_sum = 0.0;  // sum_k gamma^k r_{t+k}
  double disc = 0.0;   // gamma^n, or 0 when the episode ended inside the window
  RealVec s_n;         // state n steps ahead (or the final state)
  RealVec s_next;      // adjacent state s_{t+1}
};

// Column-stacked batch of transitions.
struct Batch {
  RealMat s;       // [state_dim x B]
  RealMat a;       // [action_dim x B]
  RealVec r_sum;   // [B]
  RealVec disc;    // [B]
  RealMat s_n;     // [state_dim x B]
  RealMat s_next;  // [state_dim x B]

  Eigen::Index size() const { return r_sum.size(); }
  static Batch from(const std::vector<Transition>& items);
  Transition at(Eigen::Index i) const;
};

// Ring of raw environment steps with n-step assembly on read.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int state_dim, int action_dim, int n_step, double gamma);

  void add(const RealVec& s, const RealVec& a, double reward, const RealVec& s_next, bool episode_end);

  // Number of raw steps that currently assemble into a full n-step window.
  std::size_t num_assembled() const;
  std::size_t num_stored() const;
  std::uint64_t total_added() const { return total_; }
  bool any_nonzero_reward() const { return nonzero_seen_; }

  // Transition starting at the i-th oldest assembled slot.
  Transition assemble(std::size_t i) const;

  // Uniform without replacement within the batch; throws std::logic_error if
  // fewer than batch_size transitions are assembled.
  std::vector<std::size_t> sample_indices(std::size_t batch_size, Rng& rng) const;
  Batch sample(std::size_t batch_size, Rng& rng) const;

  std::size_t capacity() const { return capacity_; }
  int n_step() const { return n_step_; }

 private:
  std::size_t slot(std::uint64_t logical) const { return static_cast<std::size_t>(logical % capacity_); }
  std::uint64_t oldest() const { return total_ > capacity_ ? total_ - capacity_ : 0; }

  std::size_t capacity_;
  int state_dim_;
  int action_dim_;
  int n_step_;
  double gamma_;
  RealMat s_;
  RealMat a_;
  RealMat s_next_;
  std::vector<double> reward_;
  std::vector<std::uint8_t> end_;
  std::uint64_t total_ = 0;
  bool nonzero_seen_ = false;
};

}  // namespace varlab

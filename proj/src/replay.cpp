#include "varlab/replay.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace varlab {

Batch Batch::from(const std::vector<Transition>& items) {
  if (items.empty()) throw std::invalid_argument("Batch::from: empty batch");
  const auto n = static_cast<Eigen::Index>(items.size());
  const auto sd = items.front().s.size();
  const auto ad = items.front().a.size();
  Batch b;
  b.s.resize(sd, n);
  b.a.resize(ad, n);
  b.r_sum.resize(n);
  b.disc.resize(n);
  b.s_n.resize(sd, n);
  b.s_next.resize(sd, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Transition& t = items[static_cast<std::size_t>(j)];
    b.s.col(j) = t.s;
    b.a.col(j) = t.a;
    b.r_sum(j) = t.r_sum;
    b.disc(j) = t.disc;
    b.s_n.col(j) = t.s_n;
    b.s_next.col(j) = t.s_next;
  }
  return b;
}

Transition Batch::at(Eigen::Index i) const {
  return {s.col(i), a.col(i), r_sum(i), disc(i), s_n.col(i), s_next.col(i)};
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, int state_dim, int action_dim, int n_step, double gamma)
    : capacity_(capacity),
      state_dim_(state_dim),
      action_dim_(action_dim),
      n_step_(n_step),
      gamma_(gamma),
      s_(state_dim, static_cast<Eigen::Index>(capacity)),
      a_(action_dim, static_cast<Eigen::Index>(capacity)),
      s_next_(state_dim, static_cast<Eigen::Index>(capacity)),
      reward_(capacity, 0.0),
      end_(capacity, 0) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  if (n_step < 1) throw std::invalid_argument("ReplayBuffer: n_step must be >= 1");
  if (static_cast<std::size_t>(n_step) > capacity) throw std::invalid_argument("ReplayBuffer: n_step exceeds capacity");
}

void ReplayBuffer::add(const RealVec& s, const RealVec& a, double reward, const RealVec& s_next, bool episode_end) {
  if (s.size() != state_dim_ || s_next.size() != state_dim_ || a.size() != action_dim_) {
    throw ShapeError("ReplayBuffer::add: shape mismatch");
  }
  const auto k = static_cast<Eigen::Index>(slot(total_));
  s_.col(k) = s;
  a_.col(k) = a;
  s_next_.col(k) = s_next;
  reward_[static_cast<std::size_t>(k)] = reward;
  end_[static_cast<std::size_t>(k)] = episode_end ? 1 : 0;
  if (reward != 0.0) nonzero_seen_ = true;
  ++total_;
}

std::size_t ReplayBuffer::num_stored() const { return static_cast<std::size_t>(total_ - oldest()); }

std::size_t ReplayBuffer::num_assembled() const {
  // Only the tail of an unfinished episode can be incomplete, so the
  // assembled set is a prefix of the stored range.
  const std::uint64_t lo = oldest();
  std::uint64_t hi = total_;
  const std::uint64_t tail = std::min<std::uint64_t>(static_cast<std::uint64_t>(n_step_ - 1), total_ - lo);
  for (std::uint64_t k = 0; k < tail; ++k) {
    const std::uint64_t i = total_ - 1 - k;  // candidate start, newest first
    bool complete = false;
    for (std::uint64_t j = i; j < total_; ++j) {
      if (end_[slot(j)]) {
        complete = true;
        break;
      }
    }
    if (complete) break;
    hi = i;
  }
  return static_cast<std::size_t>(hi - lo);
}

Transition ReplayBuffer::assemble(std::size_t i) const {
  if (i >= num_assembled()) throw std::out_of_range("ReplayBuffer::assemble: index not assembled");
  const std::uint64_t start = oldest() + i;
  Transition t;
  const auto k0 = static_cast<Eigen::Index>(slot(start));
  t.s = s_.col(k0);
  t.a = a_.col(k0);
  t.s_next = s_next_.col(k0);
  double g = 1.0;
  for (int k = 0; k < n_step_; ++k) {
    const std::size_t idx = slot(start + static_cast<std::uint64_t>(k));
    t.r_sum += g * reward_[idx];
    g *= gamma_;
    if (end_[idx]) {
      t.disc = 0.0;
      t.s_n = s_next_.col(static_cast<Eigen::Index>(idx));
      return t;
    }
  }
  t.disc = g;
  t.s_n = s_next_.col(static_cast<Eigen::Index>(slot(start + static_cast<std::uint64_t>(n_step_ - 1))));
  return t;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch_size, Rng& rng) const {
  const std::size_t n = num_assembled();
  if (batch_size == 0) throw std::invalid_argument("ReplayBuffer::sample: empty batch requested");
  if (n < batch_size) {
    throw std::logic_error("ReplayBuffer::sample: only " + std::to_string(n) + " assembled transitions, need " +
                           std::to_string(batch_size));
  }
  // Floyd's algorithm: distinct indices, uniform over subsets; the result is
  // then shuffled so the order is uniform too.
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(batch_size * 2);
  for (std::size_t j = n - batch_size; j < n; ++j) {
    const auto t = static_cast<std::size_t>(rng() % (j + 1));
    if (chosen.insert(t).second) {
      out.push_back(t);
    } else {
      chosen.insert(j);
      out.push_back(j);
    }
  }
  for (std::size_t i = out.size(); i > 1; --i) {
    const auto k = static_cast<std::size_t>(rng() % i);
    std::swap(out[i - 1], out[k]);
  }
  return out;
}

Batch ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  const std::vector<std::size_t> idx = sample_indices(batch_size, rng);
  std::vector<Transition> items;
  items.reserve(idx.size());
  for (std::size_t i : idx) items.push_back(assemble(i));
  return Batch::from(items);
}

}  // namespace varlab

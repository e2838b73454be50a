#pragma once

#include <deque>
#include <iosfwd>
#include <vector>

#include "relstack/blocksworld.hpp"
#include "relstack/rng.hpp"

namespace relstack {

/// One finished episode, stored column-packed: L+1 observation rows (the
/// initial observation plus one per step) and L action/reward rows.
/// Block-indexed tensors pack row t*n+i for observation t, block i.
struct StoredEpisode {
  int n = 0;        // block count
  Tensor ee;        // [L+1, 8]
  Tensor blocks;    // [(L+1)*n, 15]
  Tensor achieved;  // [(L+1)*n, 3], equals the position columns of `blocks`
  Tensor goals;     // [n, 3] desired goals for the whole episode
  Tensor actions;   // [L, 4]
  Tensor rewards;   // [L, 1]

  int length() const { return actions.rows(); }
};

/// A training transition materialized from storage, goals possibly
/// relabeled in hindsight.
struct Transition {
  Observation obs;
  Observation next_obs;
  Tensor action;  // [1, 4]
  double reward = 0.0;
  bool done = false;       // episode's final step (time limit)
  bool relabeled = false;
  int index = 0;        // step index within the source episode
  int source_step = 0;  // future step whose achieved goals were adopted (== index when not relabeled)
};

/// Episodic ring buffer with hindsight goal relabeling ("future" strategy).
/// Capacity counts transitions; eviction drops whole episodes oldest-first
/// so future-step relabeling stays well-defined.
class ReplayBuffer {
 public:
  ReplayBuffer(size_t capacity, RewardParams reward_params);

  /// Validates internal consistency (shape agreement, achieved rows equal
  /// block positions) and appends, evicting old episodes if needed.
  void store_episode(StoredEpisode ep);

  /// Uniform transition sampling. A round(relabel_fraction * batch_size)
  /// prefix of the batch gets its goals replaced by the achieved goals of a
  /// uniformly drawn step u >= the transition's own index, with the reward
  /// recomputed under the new goals.
  std::vector<Transition> sample(int batch_size, double relabel_fraction, Rng& rng) const;

  size_t size() const { return total_transitions_; }
  size_t capacity() const { return capacity_; }
  size_t episode_count() const { return episodes_.size(); }
  const StoredEpisode& episode(size_t i) const { return episodes_[i]; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  Transition materialize(const StoredEpisode& ep, int t) const;
  Observation observation_at(const StoredEpisode& ep, int t) const;

  size_t capacity_;
  RewardParams reward_params_;
  std::deque<StoredEpisode> episodes_;
  size_t total_transitions_ = 0;
  std::vector<size_t> cumulative_;  // prefix transition counts, for lookup
};

}  // namespace relstack

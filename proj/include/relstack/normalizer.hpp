#pragma once

#include <string>

#include "relstack/blocksworld.hpp"
#include "relstack/tensor.hpp"

namespace relstack {

/// Running mean/std over network inputs. One stream of statistics is shared
/// by every block slot (each block's 21-D feature row counts as a sample);
/// the 8-D gripper vector has its own stream. Standard deviations are
/// floored at 1e-6 when applied. Only training rollouts feed updates.
class Normalizer {
 public:
  static constexpr int kBlockDim = 21;  // [features(15), goal(3), goal - position(3)]
  static constexpr int kEeDim = 8;

  Normalizer();

  void update(const Observation& obs);

  /// (x - mean) / max(std, 1e-6) for one block row / the gripper vector.
  void normalize_block_row(const double* in, double* out) const;
  void normalize_ee(const double* in, double* out) const;

  long long block_count() const { return block_n_; }
  long long ee_count() const { return ee_n_; }
  double block_mean(int i) const { return block_mean_[i]; }
  double block_std(int i) const;
  double ee_std(int i) const;

  void save(const std::string& path) const;
  void load(const std::string& path);
  bool operator==(const Normalizer& o) const;

 private:
  // Welford accumulators.
  long long block_n_ = 0;
  Tensor block_mean_, block_m2_;
  long long ee_n_ = 0;
  Tensor ee_mean_, ee_m2_;
};

/// Assembles the per-block 21-D input row (un-normalized):
/// [x^f(15), x^g(3), x^g - x^p(3)].
void block_input_row(const Observation& obs, int i, double* out21);

}  // namespace relstack

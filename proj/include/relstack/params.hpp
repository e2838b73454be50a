#pragma once

#include <memory>
#include <string>
#include <vector>

#include "relstack/rng.hpp"
#include "relstack/tensor.hpp"

namespace relstack {

/// A trainable tensor with its gradient accumulator and Adam state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  long long adam_steps = 0;

  Parameter(std::string n, int rows, int cols)
      : name(std::move(n)),
        value(rows, cols),
        grad(rows, cols),
        adam_m(rows, cols),
        adam_v(rows, cols) {}
};

/// Ordered, named collection of parameters. Owned by exactly one network;
/// target copies and worker snapshots are whole-set copies.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other) { copy_all_from(other); }
  ParamSet& operator=(const ParamSet& other) {
    if (this != &other) {
      items_.clear();
      copy_all_from(other);
    }
    return *this;
  }
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  Parameter& add(const std::string& name, int rows, int cols);

  /// Affine-layer init: uniform +-1/sqrt(fan_in), zero bias.
  Parameter& add_affine_weight(const std::string& name, int fan_in, int fan_out, Rng& rng);
  Parameter& add_uniform(const std::string& name, int rows, int cols, double bound, Rng& rng);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  size_t count() const { return items_.size(); }
  long long total_values() const;

  Parameter& at(size_t i) { return *items_[i]; }
  const Parameter& at(size_t i) const { return *items_[i]; }

  void zero_grads();

  /// value <- other.value, matched by position (names must agree).
  void copy_values_from(const ParamSet& other);

  /// value <- (1 - tau) * value + tau * live.value.
  void polyak_from(const ParamSet& live, double tau);

  bool values_equal(const ParamSet& other) const;

  /// Checkpoint container: version tag, (name, shape) manifest, then raw
  /// little-endian doubles in manifest order.
  void save_values(const std::string& path) const;
  void load_values(const std::string& path);

  /// Adam moments and step counters, same container format.
  void save_opt_state(const std::string& path) const;
  void load_opt_state(const std::string& path);

 private:
  void copy_all_from(const ParamSet& other);

  std::vector<std::unique_ptr<Parameter>> items_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam step over every parameter in the set; clears gradients after.
/// A NaN/Inf gradient aborts the whole update and names the parameter.
void adam_step(ParamSet& params, const AdamConfig& cfg);

/// Single-tensor variant used for the temperature parameter.
void adam_step(Parameter& p, const AdamConfig& cfg);

}  // namespace relstack

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "relstack/params.hpp"
#include "relstack/tape.hpp"

namespace relstack {

struct GradCheckConfig {
  double step = 1e-6;       // central-difference half step
  double tolerance = 1e-4;  // max allowed relative error
  double floor = 1e-8;      // denominator floor in the relative error
};

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  std::string worst_entry;  // "param[index]" of the worst disagreement
  long long entries = 0;    // gradient entries compared
  bool passed = false;
};

/// Builds the (scalar) loss on the given tape. Called once for the analytic
/// pass and twice per parameter entry for the finite-difference probes, so
/// it must be a pure function of the parameter values.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares backward() gradients against central finite differences for
/// every entry of every parameter in `params`.
GradCheckResult check_gradients(const std::string& name, ParamSet& params,
                                const LossBuilder& build,
                                const GradCheckConfig& cfg = {});

/// Per-primitive checks: one small randomized loss per tape operation,
/// exercising every differentiable input of each op.
std::vector<GradCheckResult> primitive_gradient_checks(uint64_t seed,
                                                       const GradCheckConfig& cfg = {});

}  // namespace relstack

#include "relstack/gradcheck.hpp"

#include <cmath>

namespace relstack {

namespace {

double eval_loss(const LossBuilder& build) {
  Tape t;
  return t.val(build(t)).scalar_value();
}

Tensor random_tensor(int rows, int cols, Rng& rng, double lo, double hi) {
  Tensor t(rows, cols);
  for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Random values bounded away from zero, for ops with a kink at the origin.
Tensor random_signed_tensor(int rows, int cols, Rng& rng) {
  Tensor t(rows, cols);
  for (int i = 0; i < t.size(); ++i) {
    const double mag = rng.uniform(0.2, 1.2);
    t[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

void fill_random(Parameter& p, Rng& rng, double lo, double hi) {
  for (int i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(lo, hi);
}

// Reduces an arbitrary output to a scalar that is sensitive to every entry:
// elementwise product with a fixed random mask, then a sum.
Var masked_sum(Tape& t, Var out, const Tensor& mask) {
  return t.sum_all(t.mul(out, t.constant(mask)));
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, ParamSet& params,
                                const LossBuilder& build, const GradCheckConfig& cfg) {
  GradCheckResult res;
  res.name = name;

  params.zero_grads();
  std::vector<Tensor> analytic;
  {
    Tape t;
    Var loss = build(t);
    t.backward(loss);
  }
  analytic.reserve(params.count());
  for (size_t i = 0; i < params.count(); ++i) analytic.push_back(params.at(i).grad);
  params.zero_grads();

  for (size_t i = 0; i < params.count(); ++i) {
    Parameter& p = params.at(i);
    for (int j = 0; j < p.value.size(); ++j) {
      const double saved = p.value[j];
      p.value[j] = saved + cfg.step;
      const double up = eval_loss(build);
      p.value[j] = saved - cfg.step;
      const double down = eval_loss(build);
      p.value[j] = saved;

      const double fd = (up - down) / (2.0 * cfg.step);
      const double an = analytic[i][j];
      const double denom = std::max({std::fabs(fd), std::fabs(an), cfg.floor});
      const double rel = std::fabs(fd - an) / denom;
      ++res.entries;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_entry = p.name + "[" + std::to_string(j) + "]";
      }
    }
  }

  res.passed = res.max_rel_err < cfg.tolerance;
  return res;
}

std::vector<GradCheckResult> primitive_gradient_checks(uint64_t seed,
                                                       const GradCheckConfig& cfg) {
  std::vector<GradCheckResult> out;
  Rng rng(seed);

  auto run = [&](const std::string& name, ParamSet& ps, const LossBuilder& build) {
    out.push_back(check_gradients(name, ps, build, cfg));
  };

  {
    ParamSet ps;
    Parameter& x = ps.add("x", 3, 4);
    Parameter& W = ps.add("W", 4, 5);
    Parameter& b = ps.add("b", 1, 5);
    fill_random(x, rng, -1.0, 1.0);
    fill_random(W, rng, -1.0, 1.0);
    fill_random(b, rng, -1.0, 1.0);
    Tensor mask = random_tensor(3, 5, rng, 0.5, 1.5);
    run("affine", ps, [&](Tape& t) {
      return masked_sum(t, t.affine(t.param(x), t.param(W), t.param(b)), mask);
    });
  }
  {
    ParamSet ps;
    Parameter& M = ps.add("M", 4, 3);
    Parameter& v = ps.add("v", 3, 1);
    fill_random(M, rng, -1.0, 1.0);
    fill_random(v, rng, -1.0, 1.0);
    Tensor mask = random_tensor(4, 1, rng, 0.5, 1.5);
    run("matvec", ps, [&](Tape& t) {
      return masked_sum(t, t.matvec(t.param(M), t.param(v)), mask);
    });
  }
  {
    ParamSet ps;
    Parameter& x = ps.add("x", 3, 5);
    fill_random(x, rng, -2.0, 2.0);
    Tensor mask = random_tensor(3, 5, rng, 0.5, 1.5);
    run("tanh", ps, [&](Tape& t) { return masked_sum(t, t.tanh(t.param(x)), mask); });
  }
  {
    ParamSet ps;
    Parameter& x = ps.add("x", 3, 5);
    x.value = random_signed_tensor(3, 5, rng);
    Tensor mask = random_tensor(3, 5, rng, 0.5, 1.5);
    run("leaky_relu", ps,
        [&](Tape& t) { return masked_sum(t, t.leaky_relu(t.param(x)), mask); });
  }
  {
    ParamSet ps;
    Parameter& x = ps.add("x", 4, 6);
    fill_random(x, rng, -2.0, 2.0);
    Tensor mask = random_tensor(4, 6, rng, 0.5, 1.5);
    run("softmax_rows", ps,
        [&](Tape& t) { return masked_sum(t, t.softmax_rows(t.param(x)), mask); });
  }
  {
    ParamSet ps;
    Parameter& x = ps.add("x", 4, 6);
    Parameter& gain = ps.add("gain", 1, 6);
    Parameter& bias = ps.add("bias", 1, 6);
    fill_random(x, rng, -2.0, 2.0);
    fill_random(gain, rng, 0.5, 1.5);
    fill_random(bias, rng, -0.5, 0.5);
    Tensor mask = random_tensor(4, 6, rng, 0.5, 1.5);
    run("layer_norm_rows", ps, [&](Tape& t) {
      return masked_sum(t, t.layer_norm_rows(t.param(x), t.param(gain), t.param(bias)),
                        mask);
    });
  }
  {
    ParamSet ps;
    Parameter& a = ps.add("a", 3, 4);
    Parameter& b = ps.add("b", 3, 4);
    fill_random(a, rng, -1.0, 1.0);
    fill_random(b, rng, -1.0, 1.0);
    Tensor mask = random_tensor(3, 4, rng, 0.5, 1.5);
    run("add", ps, [&](Tape& t) {
      return masked_sum(t, t.add(t.param(a), t.param(b)), mask);
    });
    run("mul", ps, [&](Tape& t) {
      return masked_sum(t, t.mul(t.param(a), t.param(b)), mask);
    });
    run("squared_error", ps, [&](Tape& t) {
      return masked_sum(t, t.squared_error(t.param(a), t.param(b)), mask);
    });
  }
  {
    ParamSet ps;
    Parameter& x = ps.add("x", 3, 4);
    fill_random(x, rng, -1.0, 1.0);
    Tensor mask = random_tensor(3, 4, rng, 0.5, 1.5);
    run("scale_shift", ps, [&](Tape& t) {
      return masked_sum(t, t.scale_shift(t.param(x), -0.7, 0.3), mask);
    });
    Tensor rmask = random_tensor(2, 6, rng, 0.5, 1.5);
    run("reshape", ps, [&](Tape& t) {
      return masked_sum(t, t.reshape(t.param(x), 2, 6), rmask);
    });
    run("sum_all", ps, [&](Tape& t) { return t.sum_all(t.param(x)); });
    run("mean_all", ps, [&](Tape& t) { return t.mean_all(t.param(x)); });
  }
  {
    ParamSet ps;
    Parameter& a = ps.add("a", 3, 4);
    Parameter& b = ps.add("b", 3, 2);
    fill_random(a, rng, -1.0, 1.0);
    fill_random(b, rng, -1.0, 1.0);
    Tensor mask = random_tensor(3, 6, rng, 0.5, 1.5);
    run("concat_cols", ps, [&](Tape& t) {
      return masked_sum(t, t.concat_cols(t.param(a), t.param(b)), mask);
    });
  }
  {
    ParamSet ps;
    Parameter& x = ps.add("x", 2, 3);
    fill_random(x, rng, -1.0, 1.0);
    Tensor mask = random_tensor(6, 3, rng, 0.5, 1.5);
    run("repeat_rows", ps, [&](Tape& t) {
      return masked_sum(t, t.repeat_rows(t.param(x), 3), mask);
    });
  }
  {
    // two samples of three vertices each
    ParamSet ps;
    Parameter& q = ps.add("q", 6, 4);
    Parameter& k = ps.add("k", 6, 4);
    fill_random(q, rng, -1.0, 1.0);
    fill_random(k, rng, -1.0, 1.0);
    Tensor mask = random_tensor(18, 4, rng, 0.5, 1.5);
    run("pair_sum", ps, [&](Tape& t) {
      return masked_sum(t, t.pair_sum(t.param(q), t.param(k), 3), mask);
    });
  }
  {
    ParamSet ps;
    Parameter& w = ps.add("w", 6, 3);
    Parameter& m = ps.add("m", 6, 4);
    fill_random(w, rng, -1.0, 1.0);
    fill_random(m, rng, -1.0, 1.0);
    Tensor mask = random_tensor(6, 4, rng, 0.5, 1.5);
    run("block_mix", ps, [&](Tape& t) {
      return masked_sum(t, t.block_mix(t.param(w), t.param(m), 3), mask);
    });
    Tensor mmask = random_tensor(2, 4, rng, 0.5, 1.5);
    run("block_mean_rows", ps, [&](Tape& t) {
      return masked_sum(t, t.block_mean_rows(t.param(m), 3), mmask);
    });
  }
  {
    ParamSet ps;
    Parameter& u = ps.add("u", 3, 4);
    Parameter& mean = ps.add("mean", 3, 4);
    Parameter& log_std = ps.add("log_std", 3, 4);
    fill_random(u, rng, -1.0, 1.0);
    fill_random(mean, rng, -1.0, 1.0);
    fill_random(log_std, rng, -1.0, 0.5);
    Tensor mask = random_tensor(3, 1, rng, 0.5, 1.5);
    run("gaussian_log_density", ps, [&](Tape& t) {
      return masked_sum(
          t, t.gaussian_log_density(t.param(u), t.param(mean), t.param(log_std)), mask);
    });
    run("tanh_log_det", ps, [&](Tape& t) {
      return masked_sum(t, t.tanh_log_det(t.param(u)), mask);
    });
    Tensor noise = random_tensor(3, 4, rng, -1.5, 1.5);
    Tensor smask = random_tensor(3, 4, rng, 0.5, 1.5);
    run("gaussian_sample", ps, [&](Tape& t) {
      return masked_sum(t, t.gaussian_sample(t.param(mean), t.param(log_std), noise),
                        smask);
    });
  }
  {
    ParamSet ps;
    Parameter& a = ps.add("a", 3, 4);
    Parameter& b = ps.add("b", 3, 4);
    // keep |a-b| well above the probe step so the argmin mask is stable
    for (int i = 0; i < a.value.size(); ++i) {
      const double base = rng.uniform(-1.0, 1.0);
      const double gap = rng.uniform(0.05, 0.5);
      a.value[i] = base;
      b.value[i] = rng.uniform() < 0.5 ? base + gap : base - gap;
    }
    Tensor mask = random_tensor(3, 4, rng, 0.5, 1.5);
    run("elementwise_min", ps, [&](Tape& t) {
      return masked_sum(t, t.elementwise_min(t.param(a), t.param(b)), mask);
    });
  }

  return out;
}

}  // namespace relstack

#include "relstack/tape.hpp"

#include <algorithm>
#include <cmath>

namespace relstack {

namespace {

constexpr double kLeakySlope = 0.01;
constexpr double kLayerNormEps = 1e-5;
constexpr double kHalfLog2Pi = 0.91893853320467274178032973640562;  // 0.5*log(2*pi)
constexpr double kLog2 = 0.69314718055994530941723212145818;

double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

}  // namespace

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_id(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw Error("Tape: invalid Var handle");
}

const Tensor& Tape::value_of(int id) const {
  const Node& n = nodes_[id];
  return n.op == Op::kParam ? n.p->value : n.out;
}

const Tensor& Tape::val(Var v) const {
  check_id(v);
  return value_of(v.id);
}

Tensor& Tape::grad_buffer(int id) {
  Tensor& g = grads_[id];
  if (g.empty()) {
    const Tensor& v = value_of(id);
    g = Tensor(v.rows(), v.cols());
  }
  return g;
}

Var Tape::constant(Tensor t) {
  Node n;
  n.op = Op::kConst;
  n.out = std::move(t);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.op = Op::kParam;
  n.p = &p;
  return push(std::move(n));
}

Var Tape::affine(Var x, Var W, Var b) {
  check_id(x), check_id(W), check_id(b);
  const Tensor& xv = val(x);
  const Tensor& wv = val(W);
  const Tensor& bv = val(b);
  if (xv.cols() != wv.rows()) throw ShapeError("affine: x.cols != W.rows");
  require_shape(bv, 1, wv.cols(), "affine bias");
  Node n;
  n.op = Op::kAffine;
  n.in[0] = x.id, n.in[1] = W.id, n.in[2] = b.id;
  n.n_in = 3;
  n.out = Tensor(xv.rows(), wv.cols());
  n.out.map().noalias() = xv.map() * wv.map();
  n.out.map().rowwise() += bv.map().row(0);
  return push(std::move(n));
}

Var Tape::matvec(Var M, Var v) {
  const Tensor& mv = val(M);
  const Tensor& vv = val(v);
  require_shape(vv, mv.cols(), 1, "matvec vector");
  Node n;
  n.op = Op::kMatVec;
  n.in[0] = M.id, n.in[1] = v.id;
  n.n_in = 2;
  n.out = Tensor(mv.rows(), 1);
  n.out.map().noalias() = mv.map() * vv.map();
  return push(std::move(n));
}

Var Tape::tanh(Var x) {
  const Tensor& xv = val(x);
  Node n;
  n.op = Op::kTanh;
  n.in[0] = x.id;
  n.n_in = 1;
  n.out = Tensor(xv.rows(), xv.cols());
  for (int i = 0; i < xv.size(); ++i) n.out[i] = std::tanh(xv[i]);
  return push(std::move(n));
}

Var Tape::leaky_relu(Var x) {
  const Tensor& xv = val(x);
  Node n;
  n.op = Op::kLeakyRelu;
  n.in[0] = x.id;
  n.n_in = 1;
  n.out = Tensor(xv.rows(), xv.cols());
  for (int i = 0; i < xv.size(); ++i)
    n.out[i] = xv[i] > 0.0 ? xv[i] : kLeakySlope * xv[i];
  return push(std::move(n));
}

Var Tape::softmax_rows(Var x) {
  const Tensor& xv = val(x);
  Node n;
  n.op = Op::kSoftmaxRows;
  n.in[0] = x.id;
  n.n_in = 1;
  n.out = Tensor(xv.rows(), xv.cols());
  const int C = xv.cols();
  for (int r = 0; r < xv.rows(); ++r) {
    double mx = xv.at(r, 0);
    for (int c = 1; c < C; ++c) mx = std::max(mx, xv.at(r, c));
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      const double e = std::exp(xv.at(r, c) - mx);
      n.out.at(r, c) = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < C; ++c) n.out.at(r, c) *= inv;
  }
  return push(std::move(n));
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias) {
  const Tensor& xv = val(x);
  const Tensor& gv = val(gain);
  const Tensor& bv = val(bias);
  require_shape(gv, 1, xv.cols(), "layer_norm gain");
  require_shape(bv, 1, xv.cols(), "layer_norm bias");
  Node n;
  n.op = Op::kLayerNormRows;
  n.in[0] = x.id, n.in[1] = gain.id, n.in[2] = bias.id;
  n.n_in = 3;
  n.out = Tensor(xv.rows(), xv.cols());
  n.aux = Tensor(xv.rows(), 2);  // per row: mean, inv_std
  const int C = xv.cols();
  for (int r = 0; r < xv.rows(); ++r) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += xv.at(r, c);
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      const double d = xv.at(r, c) - mean;
      var += d * d;
    }
    var /= C;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    n.aux.at(r, 0) = mean;
    n.aux.at(r, 1) = inv;
    for (int c = 0; c < C; ++c)
      n.out.at(r, c) = (xv.at(r, c) - mean) * inv * gv[c] + bv[c];
  }
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  require_same_shape(av, bv, "add");
  Node n;
  n.op = Op::kAdd;
  n.in[0] = a.id, n.in[1] = b.id;
  n.n_in = 2;
  n.out = Tensor(av.rows(), av.cols());
  n.out.map() = av.map() + bv.map();
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  require_same_shape(av, bv, "mul");
  Node n;
  n.op = Op::kMul;
  n.in[0] = a.id, n.in[1] = b.id;
  n.n_in = 2;
  n.out = Tensor(av.rows(), av.cols());
  for (int i = 0; i < av.size(); ++i) n.out[i] = av[i] * bv[i];
  return push(std::move(n));
}

Var Tape::scale_shift(Var x, double k, double c) {
  const Tensor& xv = val(x);
  Node n;
  n.op = Op::kScaleShift;
  n.in[0] = x.id;
  n.n_in = 1;
  n.d0 = k;
  n.d1 = c;
  n.out = Tensor(xv.rows(), xv.cols());
  for (int i = 0; i < xv.size(); ++i) n.out[i] = k * xv[i] + c;
  return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row mismatch");
  Node n;
  n.op = Op::kConcatCols;
  n.in[0] = a.id, n.in[1] = b.id;
  n.n_in = 2;
  n.i0 = av.cols();
  n.out = Tensor(av.rows(), av.cols() + bv.cols());
  for (int r = 0; r < av.rows(); ++r) {
    for (int c = 0; c < av.cols(); ++c) n.out.at(r, c) = av.at(r, c);
    for (int c = 0; c < bv.cols(); ++c) n.out.at(r, av.cols() + c) = bv.at(r, c);
  }
  return push(std::move(n));
}

Var Tape::repeat_rows(Var x, int times) {
  if (times < 1) throw ShapeError("repeat_rows: times must be >= 1");
  const Tensor& xv = val(x);
  Node n;
  n.op = Op::kRepeatRows;
  n.in[0] = x.id;
  n.n_in = 1;
  n.i0 = times;
  n.out = Tensor(xv.rows() * times, xv.cols());
  for (int r = 0; r < xv.rows(); ++r)
    for (int t = 0; t < times; ++t)
      for (int c = 0; c < xv.cols(); ++c) n.out.at(r * times + t, c) = xv.at(r, c);
  return push(std::move(n));
}

Var Tape::pair_sum(Var q, Var k, int nv) {
  const Tensor& qv = val(q);
  const Tensor& kv = val(k);
  require_same_shape(qv, kv, "pair_sum");
  if (nv < 1 || qv.rows() % nv != 0) throw ShapeError("pair_sum: rows not divisible by n");
  const int B = qv.rows() / nv;
  const int D = qv.cols();
  Node n;
  n.op = Op::kPairSum;
  n.in[0] = q.id, n.in[1] = k.id;
  n.n_in = 2;
  n.i0 = nv;
  n.out = Tensor(B * nv * nv, D);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < nv; ++i)
      for (int j = 0; j < nv; ++j) {
        double* dst = n.out.data() + (size_t((b * nv + i) * nv + j)) * D;
        const double* qr = qv.data() + size_t(b * nv + i) * D;
        const double* kr = kv.data() + size_t(b * nv + j) * D;
        for (int c = 0; c < D; ++c) dst[c] = qr[c] + kr[c];
      }
  return push(std::move(n));
}

Var Tape::block_mix(Var w, Var m, int nv) {
  const Tensor& wv = val(w);
  const Tensor& mv = val(m);
  if (wv.cols() != nv) throw ShapeError("block_mix: w.cols != n");
  if (wv.rows() != mv.rows()) throw ShapeError("block_mix: row mismatch");
  if (nv < 1 || wv.rows() % nv != 0) throw ShapeError("block_mix: rows not divisible by n");
  const int B = wv.rows() / nv;
  const int D = mv.cols();
  Node n;
  n.op = Op::kBlockMix;
  n.in[0] = w.id, n.in[1] = m.id;
  n.n_in = 2;
  n.i0 = nv;
  n.out = Tensor(wv.rows(), D);
  for (int b = 0; b < B; ++b) {
    ConstMatMap Wb(wv.data() + size_t(b) * nv * nv, nv, nv);
    ConstMatMap Mb(mv.data() + size_t(b) * nv * D, nv, D);
    MatMap Ob(n.out.data() + size_t(b) * nv * D, nv, D);
    Ob.noalias() = Wb * Mb;
  }
  return push(std::move(n));
}

Var Tape::block_mean_rows(Var x, int nv) {
  const Tensor& xv = val(x);
  if (nv < 1 || xv.rows() % nv != 0)
    throw ShapeError("block_mean_rows: rows not divisible by n");
  const int B = xv.rows() / nv;
  const int D = xv.cols();
  Node n;
  n.op = Op::kBlockMeanRows;
  n.in[0] = x.id;
  n.n_in = 1;
  n.i0 = nv;
  n.out = Tensor(B, D);
  const double inv = 1.0 / nv;
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < nv; ++i)
      for (int c = 0; c < D; ++c) n.out.at(b, c) += xv.at(b * nv + i, c) * inv;
  return push(std::move(n));
}

Var Tape::sum_all(Var x) {
  const Tensor& xv = val(x);
  Node n;
  n.op = Op::kSumAll;
  n.in[0] = x.id;
  n.n_in = 1;
  double s = 0.0;
  for (int i = 0; i < xv.size(); ++i) s += xv[i];
  n.out = Tensor::scalar(s);
  return push(std::move(n));
}

Var Tape::mean_all(Var x) {
  const Tensor& xv = val(x);
  if (xv.size() == 0) throw ShapeError("mean_all: empty tensor");
  Node n;
  n.op = Op::kMeanAll;
  n.in[0] = x.id;
  n.n_in = 1;
  double s = 0.0;
  for (int i = 0; i < xv.size(); ++i) s += xv[i];
  n.out = Tensor::scalar(s / xv.size());
  return push(std::move(n));
}

Var Tape::squared_error(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  require_same_shape(av, bv, "squared_error");
  Node n;
  n.op = Op::kSquaredError;
  n.in[0] = a.id, n.in[1] = b.id;
  n.n_in = 2;
  n.out = Tensor(av.rows(), av.cols());
  for (int i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    n.out[i] = d * d;
  }
  return push(std::move(n));
}

Var Tape::gaussian_log_density(Var u, Var mean, Var log_std) {
  const Tensor& uv = val(u);
  const Tensor& mv = val(mean);
  const Tensor& sv = val(log_std);
  require_same_shape(uv, mv, "gaussian_log_density mean");
  require_same_shape(uv, sv, "gaussian_log_density log_std");
  Node n;
  n.op = Op::kGaussianLogDensity;
  n.in[0] = u.id, n.in[1] = mean.id, n.in[2] = log_std.id;
  n.n_in = 3;
  n.out = Tensor(uv.rows(), 1);
  for (int r = 0; r < uv.rows(); ++r) {
    double acc = 0.0;
    for (int c = 0; c < uv.cols(); ++c) {
      const double ls = sv.at(r, c);
      const double z = (uv.at(r, c) - mv.at(r, c)) * std::exp(-ls);
      acc += -ls - kHalfLog2Pi - 0.5 * z * z;
    }
    n.out.at(r, 0) = acc;
  }
  return push(std::move(n));
}

Var Tape::tanh_log_det(Var u) {
  const Tensor& uv = val(u);
  Node n;
  n.op = Op::kTanhLogDet;
  n.in[0] = u.id;
  n.n_in = 1;
  n.out = Tensor(uv.rows(), 1);
  for (int r = 0; r < uv.rows(); ++r) {
    double acc = 0.0;
    for (int c = 0; c < uv.cols(); ++c) {
      const double x = uv.at(r, c);
      acc += 2.0 * (kLog2 - x - softplus(-2.0 * x));
    }
    n.out.at(r, 0) = acc;
  }
  return push(std::move(n));
}

Var Tape::gaussian_sample(Var mean, Var log_std, Tensor noise) {
  const Tensor& mv = val(mean);
  const Tensor& sv = val(log_std);
  require_same_shape(mv, sv, "gaussian_sample log_std");
  require_same_shape(mv, noise, "gaussian_sample noise");
  Node n;
  n.op = Op::kGaussianSample;
  n.in[0] = mean.id, n.in[1] = log_std.id;
  n.n_in = 2;
  n.aux = std::move(noise);
  n.out = Tensor(mv.rows(), mv.cols());
  for (int i = 0; i < mv.size(); ++i)
    n.out[i] = mv[i] + std::exp(sv[i]) * n.aux[i];
  return push(std::move(n));
}

Var Tape::reshape(Var x, int rows, int cols) {
  const Tensor& xv = val(x);
  if (rows * cols != xv.size()) throw ShapeError("reshape: element count mismatch");
  Node n;
  n.op = Op::kReshape;
  n.in[0] = x.id;
  n.n_in = 1;
  n.out = Tensor(rows, cols);
  for (int i = 0; i < xv.size(); ++i) n.out[i] = xv[i];
  return push(std::move(n));
}

Var Tape::elementwise_min(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  require_same_shape(av, bv, "elementwise_min");
  Tensor mask_a(av.rows(), av.cols());
  Tensor mask_b(av.rows(), av.cols());
  for (int i = 0; i < av.size(); ++i) {
    const bool a_smaller = av[i] < bv[i];
    mask_a[i] = a_smaller ? 1.0 : 0.0;
    mask_b[i] = a_smaller ? 0.0 : 1.0;
  }
  return add(mul(a, constant(std::move(mask_a))), mul(b, constant(std::move(mask_b))));
}

void Tape::backward(Var loss) {
  check_id(loss);
  if (consumed_) throw Error("Tape: backward called twice on a consumed tape");
  const Tensor& lv = val(loss);
  if (lv.size() != 1) throw Error("Tape: backward requires a scalar loss");
  consumed_ = true;

  grads_.assign(nodes_.size(), Tensor());
  grad_buffer(loss.id)[0] = 1.0;

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    Tensor& g = grads_[id];
    if (g.empty()) continue;  // node does not influence the loss

    switch (n.op) {
      case Op::kConst:
        break;
      case Op::kParam:
        n.p->grad.map() += g.map();
        break;
      case Op::kAffine: {
        const Tensor& xv = value_of(n.in[0]);
        const Tensor& wv = value_of(n.in[1]);
        grad_buffer(n.in[0]).map().noalias() += g.map() * wv.map().transpose();
        grad_buffer(n.in[1]).map().noalias() += xv.map().transpose() * g.map();
        grad_buffer(n.in[2]).map().row(0) += g.map().colwise().sum();
        break;
      }
      case Op::kMatVec: {
        const Tensor& mv = value_of(n.in[0]);
        const Tensor& vv = value_of(n.in[1]);
        grad_buffer(n.in[0]).map().noalias() += g.map() * vv.map().transpose();
        grad_buffer(n.in[1]).map().noalias() += mv.map().transpose() * g.map();
        break;
      }
      case Op::kTanh: {
        Tensor& gx = grad_buffer(n.in[0]);
        for (int i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - n.out[i] * n.out[i]);
        break;
      }
      case Op::kLeakyRelu: {
        const Tensor& xv = value_of(n.in[0]);
        Tensor& gx = grad_buffer(n.in[0]);
        for (int i = 0; i < g.size(); ++i)
          gx[i] += g[i] * (xv[i] > 0.0 ? 1.0 : kLeakySlope);
        break;
      }
      case Op::kSoftmaxRows: {
        Tensor& gx = grad_buffer(n.in[0]);
        const int C = n.out.cols();
        for (int r = 0; r < n.out.rows(); ++r) {
          double dot = 0.0;
          for (int c = 0; c < C; ++c) dot += g.at(r, c) * n.out.at(r, c);
          for (int c = 0; c < C; ++c)
            gx.at(r, c) += n.out.at(r, c) * (g.at(r, c) - dot);
        }
        break;
      }
      case Op::kLayerNormRows: {
        const Tensor& xv = value_of(n.in[0]);
        const Tensor& gv = value_of(n.in[1]);
        Tensor& gx = grad_buffer(n.in[0]);
        Tensor& gg = grad_buffer(n.in[1]);
        Tensor& gb = grad_buffer(n.in[2]);
        const int C = xv.cols();
        for (int r = 0; r < xv.rows(); ++r) {
          const double mean = n.aux.at(r, 0);
          const double inv = n.aux.at(r, 1);
          double sum_gh = 0.0, sum_ghx = 0.0;
          for (int c = 0; c < C; ++c) {
            const double xhat = (xv.at(r, c) - mean) * inv;
            const double gh = g.at(r, c) * gv[c];
            sum_gh += gh;
            sum_ghx += gh * xhat;
            gg[c] += g.at(r, c) * xhat;
            gb[c] += g.at(r, c);
          }
          const double mean_gh = sum_gh / C;
          const double mean_ghx = sum_ghx / C;
          for (int c = 0; c < C; ++c) {
            const double xhat = (xv.at(r, c) - mean) * inv;
            gx.at(r, c) += inv * (g.at(r, c) * gv[c] - mean_gh - xhat * mean_ghx);
          }
        }
        break;
      }
      case Op::kAdd:
        grad_buffer(n.in[0]).map() += g.map();
        grad_buffer(n.in[1]).map() += g.map();
        break;
      case Op::kMul: {
        const Tensor& av = value_of(n.in[0]);
        const Tensor& bv = value_of(n.in[1]);
        Tensor& ga = grad_buffer(n.in[0]);
        Tensor& gb = grad_buffer(n.in[1]);
        for (int i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * bv[i];
          gb[i] += g[i] * av[i];
        }
        break;
      }
      case Op::kScaleShift: {
        Tensor& gx = grad_buffer(n.in[0]);
        for (int i = 0; i < g.size(); ++i) gx[i] += n.d0 * g[i];
        break;
      }
      case Op::kConcatCols: {
        Tensor& ga = grad_buffer(n.in[0]);
        Tensor& gb = grad_buffer(n.in[1]);
        const int ca = n.i0;
        const int cb = n.out.cols() - ca;
        for (int r = 0; r < n.out.rows(); ++r) {
          for (int c = 0; c < ca; ++c) ga.at(r, c) += g.at(r, c);
          for (int c = 0; c < cb; ++c) gb.at(r, c) += g.at(r, ca + c);
        }
        break;
      }
      case Op::kRepeatRows: {
        Tensor& gx = grad_buffer(n.in[0]);
        const int times = n.i0;
        for (int r = 0; r < gx.rows(); ++r)
          for (int t = 0; t < times; ++t)
            for (int c = 0; c < gx.cols(); ++c) gx.at(r, c) += g.at(r * times + t, c);
        break;
      }
      case Op::kPairSum: {
        Tensor& gq = grad_buffer(n.in[0]);
        Tensor& gk = grad_buffer(n.in[1]);
        const int nv = n.i0;
        const int D = gq.cols();
        const int B = gq.rows() / nv;
        for (int b = 0; b < B; ++b)
          for (int i = 0; i < nv; ++i)
            for (int j = 0; j < nv; ++j) {
              const double* gr = g.data() + size_t((b * nv + i) * nv + j) * D;
              double* gqr = gq.data() + size_t(b * nv + i) * D;
              double* gkr = gk.data() + size_t(b * nv + j) * D;
              for (int c = 0; c < D; ++c) {
                gqr[c] += gr[c];
                gkr[c] += gr[c];
              }
            }
        break;
      }
      case Op::kBlockMix: {
        const Tensor& wv = value_of(n.in[0]);
        const Tensor& mv = value_of(n.in[1]);
        Tensor& gw = grad_buffer(n.in[0]);
        Tensor& gm = grad_buffer(n.in[1]);
        const int nv = n.i0;
        const int D = mv.cols();
        const int B = wv.rows() / nv;
        for (int b = 0; b < B; ++b) {
          ConstMatMap Wb(wv.data() + size_t(b) * nv * nv, nv, nv);
          ConstMatMap Mb(mv.data() + size_t(b) * nv * D, nv, D);
          ConstMatMap Gb(g.data() + size_t(b) * nv * D, nv, D);
          MatMap GWb(gw.data() + size_t(b) * nv * nv, nv, nv);
          MatMap GMb(gm.data() + size_t(b) * nv * D, nv, D);
          GWb.noalias() += Gb * Mb.transpose();
          GMb.noalias() += Wb.transpose() * Gb;
        }
        break;
      }
      case Op::kBlockMeanRows: {
        Tensor& gx = grad_buffer(n.in[0]);
        const int nv = n.i0;
        const double inv = 1.0 / nv;
        for (int b = 0; b < n.out.rows(); ++b)
          for (int i = 0; i < nv; ++i)
            for (int c = 0; c < n.out.cols(); ++c)
              gx.at(b * nv + i, c) += g.at(b, c) * inv;
        break;
      }
      case Op::kSumAll: {
        Tensor& gx = grad_buffer(n.in[0]);
        const double gs = g[0];
        for (int i = 0; i < gx.size(); ++i) gx[i] += gs;
        break;
      }
      case Op::kMeanAll: {
        Tensor& gx = grad_buffer(n.in[0]);
        const double gs = g[0] / gx.size();
        for (int i = 0; i < gx.size(); ++i) gx[i] += gs;
        break;
      }
      case Op::kSquaredError: {
        const Tensor& av = value_of(n.in[0]);
        const Tensor& bv = value_of(n.in[1]);
        Tensor& ga = grad_buffer(n.in[0]);
        Tensor& gb = grad_buffer(n.in[1]);
        for (int i = 0; i < g.size(); ++i) {
          const double d = 2.0 * (av[i] - bv[i]) * g[i];
          ga[i] += d;
          gb[i] -= d;
        }
        break;
      }
      case Op::kGaussianLogDensity: {
        const Tensor& uv = value_of(n.in[0]);
        const Tensor& mv = value_of(n.in[1]);
        const Tensor& sv = value_of(n.in[2]);
        Tensor& gu = grad_buffer(n.in[0]);
        Tensor& gm = grad_buffer(n.in[1]);
        Tensor& gs = grad_buffer(n.in[2]);
        for (int r = 0; r < uv.rows(); ++r) {
          const double gr = g.at(r, 0);
          for (int c = 0; c < uv.cols(); ++c) {
            const double inv_std = std::exp(-sv.at(r, c));
            const double z = (uv.at(r, c) - mv.at(r, c)) * inv_std;
            gu.at(r, c) += gr * (-z * inv_std);
            gm.at(r, c) += gr * (z * inv_std);
            gs.at(r, c) += gr * (z * z - 1.0);
          }
        }
        break;
      }
      case Op::kTanhLogDet: {
        const Tensor& uv = value_of(n.in[0]);
        Tensor& gu = grad_buffer(n.in[0]);
        for (int r = 0; r < uv.rows(); ++r) {
          const double gr = g.at(r, 0);
          for (int c = 0; c < uv.cols(); ++c)
            gu.at(r, c) += gr * (-2.0 * std::tanh(uv.at(r, c)));
        }
        break;
      }
      case Op::kGaussianSample: {
        const Tensor& sv = value_of(n.in[1]);
        Tensor& gm = grad_buffer(n.in[0]);
        Tensor& gs = grad_buffer(n.in[1]);
        for (int i = 0; i < g.size(); ++i) {
          gm[i] += g[i];
          gs[i] += g[i] * std::exp(sv[i]) * n.aux[i];
        }
        break;
      }
      case Op::kReshape: {
        Tensor& gx = grad_buffer(n.in[0]);
        for (int i = 0; i < g.size(); ++i) gx[i] += g[i];
        break;
      }
      default:
        throw Error("Tape: unsupported op in backward pass");
    }
  }
}

Tensor Tape::grad(Var v) const {
  check_id(v);
  if (!consumed_) throw Error("Tape: grad queried before backward");
  if (v.id < static_cast<int>(grads_.size()) && !grads_[v.id].empty()) return grads_[v.id];
  const Tensor& value = value_of(v.id);
  return Tensor(value.rows(), value.cols());
}

}  // namespace relstack

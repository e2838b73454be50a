#pragma once

#include <vector>

#include "relstack/params.hpp"
#include "relstack/tensor.hpp"

namespace relstack {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode automatic differentiation over dense tensors, define-by-run.
/// The op set is closed: exactly the primitives the actor/critic networks
/// need, each with a hand-written vector-Jacobian product. Forward values
/// are computed eagerly as ops are recorded; backward() walks the record in
/// reverse and accumulates into Parameter::grad for every parameter leaf.
///
/// Tapes are single-threaded objects. Forward-only users (rollout workers,
/// target evaluation) simply never call backward().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves ---
  Var constant(Tensor t);
  Var param(Parameter& p);

  // --- primitives ---
  /// x[R,n] * W[n,m] + b[1,m] broadcast over rows -> [R,m]
  Var affine(Var x, Var W, Var b);
  /// M[R,n] * v[n,1] -> [R,1]
  Var matvec(Var M, Var v);
  Var tanh(Var x);
  /// slope 0.01 on the negative side
  Var leaky_relu(Var x);
  /// softmax along each row
  Var softmax_rows(Var x);
  /// per-row mean/variance normalization, variance epsilon 1e-5,
  /// learned gain[1,d] and bias[1,d]
  Var layer_norm_rows(Var x, Var gain, Var bias);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  /// k * x + c elementwise, k and c compile-time constants of the graph
  Var scale_shift(Var x, double k, double c);
  Var concat_cols(Var a, Var b);
  /// each row repeated `times` consecutive times: [B,c] -> [B*times, c]
  Var repeat_rows(Var x, int times);
  /// q,k: [B*n, d]; out[(b*n+i)*n + j] = q[b*n+i] + k[b*n+j] -> [B*n*n, d]
  Var pair_sum(Var q, Var k, int n);
  /// w[B*n, n], m[B*n, d]; per sample b: Out_b = W_b * M_b -> [B*n, d]
  Var block_mix(Var w, Var m, int n);
  /// mean over each consecutive group of n rows: [B*n, d] -> [B, d]
  Var block_mean_rows(Var x, int n);
  Var sum_all(Var x);
  Var mean_all(Var x);
  /// (a - b)^2 elementwise
  Var squared_error(Var a, Var b);
  /// diagonal Gaussian log density of u under (mean, log_std), summed over
  /// columns -> [B,1]
  Var gaussian_log_density(Var u, Var mean, Var log_std);
  /// sum_d log(1 - tanh(u_d)^2), the tanh-squashing change-of-variables
  /// term, computed in a softplus-stable form -> [B,1]
  Var tanh_log_det(Var u);
  /// reparameterized draw mean + exp(log_std) * noise; noise is a fixed
  /// input recorded with the node
  Var gaussian_sample(Var mean, Var log_std, Tensor noise);
  /// metadata-only: reinterpret [R,C] as [rows,cols] with R*C == rows*cols
  Var reshape(Var x, int rows, int cols);

  // --- composed helper (not a primitive): elementwise min via an argmin
  // mask captured at record time, so gradient flows to the smaller input ---
  Var elementwise_min(Var a, Var b);

  const Tensor& val(Var v) const;
  int rows(Var v) const { return val(v).rows(); }
  int cols(Var v) const { return val(v).cols(); }

  /// Accumulates d(loss)/d(p) into every reachable Parameter's grad.
  /// loss must be 1x1; a tape can only be differentiated once.
  void backward(Var loss);

  /// d(loss)/d(node), valid after backward(). Zero tensor if unreachable.
  Tensor grad(Var v) const;

  size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : uint8_t {
    kConst,
    kParam,
    kAffine,
    kMatVec,
    kTanh,
    kLeakyRelu,
    kSoftmaxRows,
    kLayerNormRows,
    kAdd,
    kMul,
    kScaleShift,
    kConcatCols,
    kRepeatRows,
    kPairSum,
    kBlockMix,
    kBlockMeanRows,
    kSumAll,
    kMeanAll,
    kSquaredError,
    kGaussianLogDensity,
    kTanhLogDet,
    kGaussianSample,
    kReshape,
  };

  struct Node {
    Op op;
    int in[3] = {-1, -1, -1};
    int n_in = 0;
    Tensor out;        // empty for kParam (value lives in the Parameter)
    Parameter* p = nullptr;
    int i0 = 0;        // op-specific small context
    double d0 = 0.0;
    double d1 = 0.0;
    Tensor aux;        // op-specific saved forward context
  };

  Var push(Node n);
  const Tensor& value_of(int id) const;
  Tensor& grad_buffer(int id);
  void check_id(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool consumed_ = false;
};

}  // namespace relstack

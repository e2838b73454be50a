#include "relstack/renn.hpp"

#include <cmath>
#include <sstream>

namespace relstack {

namespace {
constexpr double kLogStdLo = -20.0;
constexpr double kLogStdHi = 2.0;
// tanh-mapped head: log_std = center + span * tanh(raw)
constexpr double kLogStdSpan = (kLogStdHi - kLogStdLo) / 2.0;
constexpr double kLogStdCenter = (kLogStdHi + kLogStdLo) / 2.0;
}  // namespace

EncodedBatch encode_batch(const std::vector<const Observation*>& obs,
                          const Normalizer& norm) {
  if (obs.empty()) throw Error("encode_batch: empty batch");
  const int B = static_cast<int>(obs.size());
  const int n = obs[0]->n();
  if (n < 1) throw Error("encode_batch: observation has no blocks");
  for (const Observation* o : obs)
    if (o->n() != n) throw ShapeError("encode_batch: mixed block counts in one batch");

  EncodedBatch out;
  out.batch = B;
  out.n = n;
  out.block_feats = Tensor(B * n, Normalizer::kBlockDim);
  out.ee = Tensor(B, Normalizer::kEeDim);
  double raw[Normalizer::kBlockDim];
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) {
      block_input_row(*obs[b], i, raw);
      norm.normalize_block_row(raw, out.block_feats.data() +
                                        size_t(b * n + i) * Normalizer::kBlockDim);
    }
    norm.normalize_ee(obs[b]->ee.data(), out.ee.data() + size_t(b) * Normalizer::kEeDim);
  }
  return out;
}

EncodedBatch encode_one(const Observation& obs, const Normalizer& norm) {
  return encode_batch({&obs}, norm);
}

Network::Network(Head head, const NetConfig& cfg, std::string name, uint64_t init_seed)
    : head_(head), cfg_(cfg), name_(std::move(name)) {
  Rng rng(init_seed);
  const bool with_action = head_ == Head::kQ;
  const int d = cfg_.embed_dim;

  if (cfg_.renn) {
    const int in = cfg_.vertex_input_dim(with_action);
    params_.add_affine_weight("embed.W", in, d, rng);
    params_.add("embed.b", 1, d);
    for (int r = 0; r < cfg_.rounds; ++r) {
      const std::string p = "round" + std::to_string(r) + ".";
      for (const char* phi : {"q", "k", "m"}) {
        params_.add_affine_weight(p + phi + ".W", d, d, rng);
        params_.add(p + phi + ".b", 1, d);
      }
      params_.add_uniform(p + "V", d, 1, 1.0 / std::sqrt(double(d)), rng);
      params_.add(p + "ln.gain", 1, d).value.fill(1.0);
      params_.add(p + "ln.bias", 1, d);
    }
    for (int i = 0; i < cfg_.readout_layers; ++i) {
      const std::string p = "readout" + std::to_string(i) + ".";
      params_.add_affine_weight(p + "W", d, d, rng);
      params_.add(p + "b", 1, d);
    }
  } else {
    int in = cfg_.flat_input_dim(with_action);
    for (int i = 0; i < cfg_.mlp_layers; ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      params_.add_affine_weight(p + "W", in, cfg_.mlp_width, rng);
      params_.add(p + "b", 1, cfg_.mlp_width);
      in = cfg_.mlp_width;
    }
  }

  const int trunk_out = cfg_.renn ? d : cfg_.mlp_width;
  if (head_ == Head::kPolicy) {
    params_.add_affine_weight("head.mean.W", trunk_out, cfg_.action_dim, rng);
    params_.add("head.mean.b", 1, cfg_.action_dim);
    params_.add_affine_weight("head.log_std.W", trunk_out, cfg_.action_dim, rng);
    // raw-head bias chosen so the initial log_std sits at 0 (unit std)
    params_.add("head.log_std.b", 1, cfg_.action_dim)
        .value.fill(std::atanh(-kLogStdCenter / kLogStdSpan));
  } else {
    params_.add_affine_weight("head.q.W", trunk_out, 1, rng);
    params_.add("head.q.b", 1, 1);
  }
}

void Network::check_finite(Tape& t, Var v, const std::string& stage) const {
  if (!t.val(v).all_finite())
    throw Error(name_ + ": non-finite values at " + stage);
}

Var Network::affine_layer(Tape& t, Var x, const std::string& base) {
  Parameter* W = params_.find(base + ".W");
  Parameter* b = params_.find(base + ".b");
  if (!W || !b) throw Error(name_ + ": missing parameter " + base);
  return t.affine(x, t.param(*W), t.param(*b));
}

Var Network::renn_trunk(Tape& t, const EncodedBatch& b, Var* action,
                        std::vector<Tensor>* attention) {
  const int n = b.n;
  Var x = t.concat_cols(t.constant(b.block_feats),
                        t.repeat_rows(t.constant(b.ee), n));
  if (action) x = t.concat_cols(x, t.repeat_rows(*action, n));

  Var v = t.leaky_relu(affine_layer(t, x, "embed"));
  check_finite(t, v, "embedding");

  for (int r = 0; r < cfg_.rounds; ++r) {
    const std::string p = "round" + std::to_string(r);
    Var q = affine_layer(t, v, p + ".q");
    Var k = affine_layer(t, v, p + ".k");
    Var m = affine_layer(t, v, p + ".m");
    Var scores = t.matvec(t.tanh(t.pair_sum(q, k, n)), t.param(*params_.find(p + ".V")));
    Var w = t.softmax_rows(t.reshape(scores, b.batch * n, n));
    if (attention) attention->push_back(t.val(w));
    Var agg = t.block_mix(w, m, n);
    v = t.layer_norm_rows(t.add(v, agg), t.param(*params_.find(p + ".ln.gain")),
                          t.param(*params_.find(p + ".ln.bias")));
    check_finite(t, v, p);
  }

  Var h = t.block_mean_rows(v, n);
  for (int i = 0; i < cfg_.readout_layers; ++i)
    h = t.leaky_relu(affine_layer(t, h, "readout" + std::to_string(i)));
  check_finite(t, h, "readout");
  return h;
}

Var Network::mlp_trunk(Tape& t, const EncodedBatch& b, Var* action) {
  const int slots = cfg_.max_blocks;
  if (b.n > slots) throw ShapeError(name_ + ": block count exceeds the padded width");
  Tensor flat(b.batch, Normalizer::kEeDim + slots * Normalizer::kBlockDim);
  for (int s = 0; s < b.batch; ++s) {
    double* row = flat.data() + size_t(s) * flat.cols();
    for (int k = 0; k < Normalizer::kEeDim; ++k) row[k] = b.ee.at(s, k);
    for (int i = 0; i < b.n; ++i)
      for (int k = 0; k < Normalizer::kBlockDim; ++k)
        row[Normalizer::kEeDim + i * Normalizer::kBlockDim + k] =
            b.block_feats.at(s * b.n + i, k);
    // remaining slots stay zero
  }

  Var h = t.constant(std::move(flat));
  if (action) h = t.concat_cols(h, *action);
  for (int i = 0; i < cfg_.mlp_layers; ++i)
    h = t.leaky_relu(affine_layer(t, h, "layer" + std::to_string(i)));
  check_finite(t, h, "mlp trunk");
  return h;
}

Var Network::trunk(Tape& t, const EncodedBatch& b, Var* action,
                   std::vector<Tensor>* attention) {
  if (b.batch < 1 || b.n < 1) throw ShapeError(name_ + ": empty batch");
  return cfg_.renn ? renn_trunk(t, b, action, attention) : mlp_trunk(t, b, action);
}

PolicyHeads Network::policy_forward(Tape& t, const EncodedBatch& b,
                                    std::vector<Tensor>* attention) {
  if (head_ != Head::kPolicy) throw Error(name_ + ": policy_forward on a Q network");
  Var h = trunk(t, b, nullptr, attention);
  PolicyHeads out;
  out.mean = affine_layer(t, h, "head.mean");
  out.log_std = t.scale_shift(t.tanh(affine_layer(t, h, "head.log_std")), kLogStdSpan,
                              kLogStdCenter);
  check_finite(t, out.mean, "policy head");
  check_finite(t, out.log_std, "policy log_std head");
  return out;
}

Var Network::q_forward(Tape& t, const EncodedBatch& b, Var action,
                       std::vector<Tensor>* attention) {
  if (head_ != Head::kQ) throw Error(name_ + ": q_forward on a policy network");
  require_shape(t.val(action), b.batch, cfg_.action_dim, "q_forward action");
  Var h = trunk(t, b, &action, attention);
  Var q = affine_layer(t, h, "head.q");
  check_finite(t, q, "q head");
  return q;
}

Var Network::q_forward(Tape& t, const EncodedBatch& b, const Tensor& action,
                       std::vector<Tensor>* attention) {
  return q_forward(t, b, t.constant(action), attention);
}

std::string Network::describe() const {
  std::ostringstream os;
  os << name_ << ": " << (cfg_.renn ? "set-attention network" : "flat MLP baseline");
  if (cfg_.renn)
    os << ", rounds=" << cfg_.rounds << ", dim=" << cfg_.embed_dim
       << ", readout layers=" << cfg_.readout_layers;
  else
    os << ", width=" << cfg_.mlp_width << ", layers=" << cfg_.mlp_layers
       << ", padded blocks=" << cfg_.max_blocks;
  os << ", head=" << (head_ == Head::kPolicy ? "policy" : "q") << ", parameters="
     << param_count();
  return os.str();
}

Tensor attention_heatmap(Network& actor, const Observation& obs, const Normalizer& norm) {
  if (!actor.config().renn)
    throw Error("attention_heatmap: the MLP baseline has no attention");
  std::vector<Tensor> rounds;
  Tape t;
  actor.policy_forward(t, encode_one(obs, norm), &rounds);
  if (rounds.empty()) throw Error("attention_heatmap: no rounds captured");
  return rounds.back();  // [N, N] for a single observation
}

}  // namespace relstack

#pragma once

#include <string>
#include <vector>

#include "relstack/blocksworld.hpp"
#include "relstack/normalizer.hpp"
#include "relstack/tape.hpp"

namespace relstack {

struct NetConfig {
  bool renn = true;         // false selects the flat MLP baseline
  int rounds = 3;           // message-passing rounds (no weight sharing)
  int embed_dim = 64;
  int readout_layers = 3;   // post-pooling MLP depth, width = embed_dim
  int action_dim = 4;
  int max_blocks = 9;       // padding width for the MLP baseline
  int mlp_width = 256;      // baseline hidden width
  int mlp_layers = 4;       // baseline hidden depth

  int vertex_input_dim(bool with_action) const {
    return Normalizer::kBlockDim + Normalizer::kEeDim + (with_action ? action_dim : 0);
  }
  int flat_input_dim(bool with_action) const {
    return Normalizer::kEeDim + max_blocks * Normalizer::kBlockDim +
           (with_action ? action_dim : 0);
  }
};

/// A batch of same-cardinality observations, normalized and laid out for
/// the networks: block rows packed as [B*N, 21], gripper rows as [B, 8].
struct EncodedBatch {
  Tensor block_feats;
  Tensor ee;
  int batch = 0;
  int n = 0;
};

EncodedBatch encode_batch(const std::vector<const Observation*>& obs,
                          const Normalizer& norm);
EncodedBatch encode_one(const Observation& obs, const Normalizer& norm);

struct PolicyHeads {
  Var mean;     // [B, 4]
  Var log_std;  // [B, 4], smoothly mapped into [-20, 2]
};

/// One actor or critic network: either the attention-based set network
/// (shared per-round q/k/message maps, additive attention scores,
/// residual + layer norm, mean-pool readout) or the flat MLP baseline over
/// a zero-padded fixed-width input. The same parameters evaluate on any
/// block count; batches pack same-N samples together.
class Network {
 public:
  enum class Head { kPolicy, kQ };

  Network(Head head, const NetConfig& cfg, std::string name, uint64_t init_seed);

  /// attention, when non-null, receives one [B*N, N] weight matrix per
  /// round (empty for the MLP baseline).
  PolicyHeads policy_forward(Tape& t, const EncodedBatch& b,
                             std::vector<Tensor>* attention = nullptr);
  Var q_forward(Tape& t, const EncodedBatch& b, Var action,
                std::vector<Tensor>* attention = nullptr);
  Var q_forward(Tape& t, const EncodedBatch& b, const Tensor& action,
                std::vector<Tensor>* attention = nullptr);

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const NetConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }
  Head head() const { return head_; }
  long long param_count() const { return params_.total_values(); }
  std::string describe() const;

 private:
  Var trunk(Tape& t, const EncodedBatch& b, Var* action, std::vector<Tensor>* attention);
  Var renn_trunk(Tape& t, const EncodedBatch& b, Var* action,
                 std::vector<Tensor>* attention);
  Var mlp_trunk(Tape& t, const EncodedBatch& b, Var* action);
  void check_finite(Tape& t, Var v, const std::string& stage) const;
  Var affine_layer(Tape& t, Var x, const std::string& base);

  Head head_;
  NetConfig cfg_;
  std::string name_;
  ParamSet params_;
};

/// Final-round actor attention for one observation, rows = receivers.
Tensor attention_heatmap(Network& actor, const Observation& obs, const Normalizer& norm);

}  // namespace relstack

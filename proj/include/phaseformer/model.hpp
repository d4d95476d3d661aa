#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "phaseformer/asa.hpp"
#include "phaseformer/hta.hpp"
#include "phaseformer/rng.hpp"
#include "phaseformer/tape.hpp"
#include "phaseformer/tokenizer.hpp"

namespace phaseformer {

inline constexpr double kLayerNormEps = 1e-6;

struct ModelConfig {
  size_t L = 4;          // transformer blocks
  size_t D = 64;         // model width
  size_t heads = 4;
  size_t mlp_ratio = 4;  // hidden width multiplier
  size_t num_phases = 7;
  PatchConfig patch;
  HTAConfig hta;
  ASAConfig asa;

  // Copy D/heads into the sub-configs and fill default segment lengths;
  // call after setting the top-level fields.
  void finalize();
  void validate() const;  // config error on violation
};

struct BlockParams {
  Tensor ln1_g, ln1_b;       // norm before the temporal stage
  AttentionParams temporal;
  Tensor ln2_g, ln2_b;       // norm before the spatial stage
  AttentionParams spatial;
  Tensor ln3_g, ln3_b;       // norm before the MLP
  Tensor mlp_w1, mlp_b1;     // D -> mlp_ratio*D
  Tensor mlp_w2, mlp_b2;     // mlp_ratio*D -> D
};

struct ModelParams {
  EmbeddingParams embed;
  std::vector<BlockParams> blocks;
  Tensor final_ln_g, final_ln_b;
  Tensor head_w, head_b;  // D x num_phases, 1 x num_phases
};

struct PhasePrediction {
  std::vector<double> logits;
  size_t phase = 0;  // argmax, ties toward the lower id
  uint64_t target_index = 0;
};

// Zero-filled tensors of the exact shapes the config implies.
ModelParams alloc_params(const ModelConfig& cfg);

// Truncated-normal (std 0.02) projections and position tables, unit LN
// gains, zero biases and CLS.
ModelParams init_params(const ModelConfig& cfg, Rng& rng);

// Canonical enumeration of every parameter tensor as (name, tensor, depth).
// Serialization, the optimizer, and gradient plumbing all share this order.
// Depth: embedding 0, block i at i+1, final norm and head at L+1.
using ParamVisitor = std::function<void(const std::string&, Tensor&, size_t)>;
void visit_params(ModelParams& p, const ModelConfig& cfg, const ParamVisitor& fn);

// Tape leaves for every parameter, in visit_params order.
struct BoundBlock {
  Var ln1_g, ln1_b;
  AttentionVars temporal;
  Var ln2_g, ln2_b;
  AttentionVars spatial;
  Var ln3_g, ln3_b;
  Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct BoundModel {
  EmbeddingVars embed;
  std::vector<BoundBlock> blocks;
  Var final_ln_g, final_ln_b, head_w, head_b;
  std::vector<Var> flat;  // visit_params order
};

BoundModel bind_model(Tape& tape, ModelParams& params, const ModelConfig& cfg,
                      bool requires_grad);

// One pre-norm block: temporal attention, spatial attention, MLP, each with
// a residual. The CLS row bypasses the temporal stage entirely (its residual
// would otherwise double the normalized row) and rejoins at the spatial one.
Var block_forward_nodes(Tape& tape, Var grid, const BoundBlock& bp,
                        const ModelConfig& cfg, size_t T, size_t K,
                        AttentionProbe* probe = nullptr, size_t layer = 0);

// patches -> embedding -> L blocks -> final norm on CLS -> head logits
// (1 x num_phases).
Var model_logits_nodes(Tape& tape, Var patches, const BoundModel& bound,
                       const ModelConfig& cfg, size_t T, size_t K,
                       AttentionProbe* probe = nullptr);

// Value-level single-window inference.
TokenGrid block_forward(const TokenGrid& grid, BlockParams& bp,
                        const ModelConfig& cfg);
PhasePrediction forward(const FrameVolume& vol, ModelParams& params,
                        const ModelConfig& cfg, AttentionProbe* probe = nullptr);

// Adjust a trained model to a different window length: temporal positions
// linearly resized, default segment lengths recomputed. No-op when the
// length already matches.
void adapt_to_window(ModelParams& params, ModelConfig& cfg, size_t T_new);

// SGFW1 weight container: magic, config block, then named parameter records.
// Round-trips are byte-exact.
void save_params(const std::string& path, ModelParams& params,
                 const ModelConfig& cfg);
std::pair<ModelConfig, ModelParams> load_params(const std::string& path);

}  // namespace phaseformer

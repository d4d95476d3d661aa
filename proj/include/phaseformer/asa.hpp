#pragma once

#include <cstddef>
#include <utility>

#include "phaseformer/hta.hpp"
#include "phaseformer/tape.hpp"
#include "phaseformer/tensor.hpp"
#include "phaseformer/tokenizer.hpp"

namespace phaseformer {

// How the T enhanced CLS copies collapse back into one: plain mean, or
// weights from each copy's similarity to the target frame's copy.
enum class Aggregation { MA, TFA };

const char* aggregation_name(Aggregation a);

struct ASAConfig {
  size_t heads = 1;
  size_t D = 0;
  Aggregation aggregation = Aggregation::MA;
  void validate() const;  // config error on violation
};

// Self-attention over one frame's K patch tokens plus a CLS copy. Returns
// {enhanced patch tokens (K x D), enhanced CLS (1 x D)}.
std::pair<Var, Var> spatial_attend_frame_nodes(Tape& tape, Var frame_tokens,
                                               Var cls, const AttentionVars& p,
                                               const ASAConfig& cfg);

// Collapse T per-frame CLS rows to one. MA: arithmetic mean. TFA: softmax of
// <cls_target, cls_t>/sqrt(D) with the target at row T-1; optionally exposes
// the 1 x T weight row.
Var aggregate_cls_nodes(Tape& tape, Var cls_per_frame, Aggregation mode,
                        Var* weights_out = nullptr);

// Spatial stage over a token grid: every frame attends internally together
// with its own CLS replica; the replicas are aggregated to the output CLS.
Var asa_nodes(Tape& tape, Var grid, const AttentionVars& p, const ASAConfig& cfg,
              size_t T, size_t K);

// Value-level wrappers.
std::pair<Tensor, Tensor> spatial_attend_frame(const Tensor& frame_tokens,
                                               const Tensor& cls,
                                               const AttentionParams& p,
                                               const ASAConfig& cfg);
Tensor aggregate_cls(const Tensor& cls_per_frame, Aggregation mode);
TokenGrid asa_forward(const TokenGrid& grid, const AttentionParams& p,
                      const ASAConfig& cfg);

}  // namespace phaseformer

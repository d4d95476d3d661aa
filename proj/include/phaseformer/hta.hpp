#pragma once

#include <cstddef>
#include <vector>

#include "phaseformer/tape.hpp"
#include "phaseformer/tensor.hpp"
#include "phaseformer/tokenizer.hpp"

namespace phaseformer {

// Temporal attention over nested suffix windows of the frame axis, blended
// coarse-to-fine. Shorter windows see only the most recent frames; the
// longest must span the whole window of T frames.
struct HTAConfig {
  std::vector<size_t> segment_lengths;  // ascending; back() == T
  double alpha = 0.5;                   // weight of the running aggregate
  double beta = 0.5;                    // weight of the incoming segment
  size_t heads = 1;
  size_t D = 0;

  // {ceil(T/4), ceil(T/2), T}; strictly increasing only for T >= 3, smaller
  // windows need hand-picked lengths.
  static std::vector<size_t> default_lengths(size_t T);
  void validate() const;  // config error on violation
};

// Temporal window [start, end) over frame indices; anchored so end == T
// (every window contains the target frame at T-1).
struct SegmentSpec {
  size_t start = 0;
  size_t end = 0;
  size_t length() const { return end - start; }
};

std::vector<SegmentSpec> suffix_segments(const HTAConfig& cfg, size_t T);

// One shared Q/K/V/O set serves every segment of a layer, so the parameter
// count matches plain temporal attention.
struct AttentionParams {
  Tensor wq, wk, wv;  // D x D, no bias
  Tensor wo;          // D x D
  Tensor bo;          // 1 x D
};

struct AttentionVars {
  Var wq, wk, wv, wo, bo;
};

// A row-stochastic attention matrix captured during a forward pass.
struct AttentionRecord {
  size_t layer = 0;
  size_t segment_index = 0;
  size_t spatial_position = 0;
  size_t head = 0;
  Tensor matrix;
};

struct AttentionProbe {
  std::vector<AttentionRecord> records;
};

// Multi-head self-attention over `rows` tokens (rows x D): per head,
// scores = Q K^T / sqrt(d_h), row softmax, weights applied to V; heads
// concatenated and sent through the output projection. When head_probs is
// non-null the per-head softmax nodes are appended to it.
Var multi_head_attention(Tape& tape, Var tokens, const AttentionVars& p,
                         size_t heads, std::vector<Var>* head_probs = nullptr);

// Attention among the window's tokens only; rows outside [start, end)
// neither receive nor contribute anything.
Var segment_attend_nodes(Tape& tape, Var tokens_at_k, SegmentSpec spec,
                         const AttentionVars& p, const HTAConfig& cfg,
                         std::vector<Var>* head_probs = nullptr);

// Blend the per-segment outputs, smallest first: positions already covered
// become alpha*running + beta*incoming, newly covered positions are taken
// from the incoming segment as-is.
Var pyramid_aggregate_nodes(Tape& tape, const std::vector<Var>& outputs,
                            const HTAConfig& cfg, size_t T);

// Full temporal stage over a token grid: per spatial position, attend within
// each suffix window and aggregate; the CLS row passes through unchanged.
Var hta_nodes(Tape& tape, Var grid, const AttentionVars& p, const HTAConfig& cfg,
              size_t T, size_t K, AttentionProbe* probe = nullptr,
              size_t layer = 0);

// Value-level wrappers over the tape builders.
Tensor segment_attend(const Tensor& tokens_at_k, SegmentSpec spec,
                      const AttentionParams& p, const HTAConfig& cfg);
Tensor pyramid_aggregate(const std::vector<Tensor>& outputs, const HTAConfig& cfg,
                         size_t T);
TokenGrid hta_forward(const TokenGrid& grid, const AttentionParams& p,
                      const HTAConfig& cfg, AttentionProbe* probe = nullptr);

}  // namespace phaseformer

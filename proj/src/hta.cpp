#include "phaseformer/hta.hpp"

#include <cmath>

#include "phaseformer/error.hpp"

namespace phaseformer {

std::vector<size_t> HTAConfig::default_lengths(size_t T) {
  return {(T + 3) / 4, (T + 1) / 2, T};
}

void HTAConfig::validate() const {
  if (heads < 1 || D < 1) fail(ErrorKind::config, "heads and D must be positive");
  if (D % heads != 0) fail(ErrorKind::config, "head count must divide D");
  if (segment_lengths.empty()) fail(ErrorKind::config, "need at least one segment");
  for (size_t s = 0; s < segment_lengths.size(); ++s) {
    if (segment_lengths[s] < 1) fail(ErrorKind::config, "segment lengths must be positive");
    if (s > 0 && segment_lengths[s] <= segment_lengths[s - 1])
      fail(ErrorKind::config, "segment lengths must be strictly increasing");
  }
}

std::vector<SegmentSpec> suffix_segments(const HTAConfig& cfg, size_t T) {
  cfg.validate();
  if (T < cfg.segment_lengths.back())
    fail(ErrorKind::config, "window shorter than the largest segment");
  std::vector<SegmentSpec> specs;
  specs.reserve(cfg.segment_lengths.size());
  for (size_t len : cfg.segment_lengths) specs.push_back({T - len, T});
  return specs;
}

Var multi_head_attention(Tape& tape, Var tokens, const AttentionVars& p,
                         size_t heads, std::vector<Var>* head_probs) {
  const Tensor& tt = tape.value(tokens);
  size_t D = tt.cols();
  if (heads < 1 || D % heads != 0)
    fail(ErrorKind::config, "head count must divide the token width");
  size_t dh = D / heads;
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Var q = tape.matmul(tokens, p.wq);
  Var k = tape.matmul(tokens, p.wk);
  Var v = tape.matmul(tokens, p.wv);
  std::vector<Var> head_outs;
  head_outs.reserve(heads);
  for (size_t h = 0; h < heads; ++h) {
    Var qh = tape.slice_cols(q, h * dh, dh);
    Var kh = tape.slice_cols(k, h * dh, dh);
    Var vh = tape.slice_cols(v, h * dh, dh);
    Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_scale);
    Var probs = tape.softmax_rows(scores);
    if (head_probs) head_probs->push_back(probs);
    head_outs.push_back(tape.matmul(probs, vh));
  }
  Var merged = heads == 1 ? head_outs[0] : tape.concat_cols(head_outs);
  return tape.linear(merged, p.wo, p.bo);
}

Var segment_attend_nodes(Tape& tape, Var tokens_at_k, SegmentSpec spec,
                         const AttentionVars& p, const HTAConfig& cfg,
                         std::vector<Var>* head_probs) {
  const Tensor& tt = tape.value(tokens_at_k);
  size_t T = tt.rows();
  if (spec.start >= spec.end) fail(ErrorKind::segment, "empty temporal window");
  if (spec.end > T) fail(ErrorKind::segment, "temporal window past the frame axis");
  Var window = tape.slice_rows(tokens_at_k, spec.start, spec.length());
  return multi_head_attention(tape, window, p, cfg.heads, head_probs);
}

Var pyramid_aggregate_nodes(Tape& tape, const std::vector<Var>& outputs,
                            const HTAConfig& cfg, size_t T) {
  cfg.validate();
  if (outputs.size() != cfg.segment_lengths.size())
    fail(ErrorKind::dimension, "one output per configured segment expected");
  for (size_t s = 0; s < outputs.size(); ++s)
    if (tape.value(outputs[s]).rows() != cfg.segment_lengths[s])
      fail(ErrorKind::dimension, "segment output rows disagree with its length");
  if (cfg.segment_lengths.back() != T)
    fail(ErrorKind::aggregation, "largest segment does not cover the window");

  Var running = outputs[0];
  size_t covered = cfg.segment_lengths[0];
  for (size_t s = 1; s < outputs.size(); ++s) {
    size_t len = cfg.segment_lengths[s];
    size_t fresh = len - covered;  // positions only this segment reaches
    Var incoming_new = tape.slice_rows(outputs[s], 0, fresh);
    Var incoming_shared = tape.slice_rows(outputs[s], fresh, covered);
    Var blended = tape.add(tape.scale(running, cfg.alpha),
                           tape.scale(incoming_shared, cfg.beta));
    running = tape.concat_rows({incoming_new, blended});
    covered = len;
  }
  return running;
}

Var hta_nodes(Tape& tape, Var grid, const AttentionVars& p, const HTAConfig& cfg,
              size_t T, size_t K, AttentionProbe* probe, size_t layer) {
  cfg.validate();
  const Tensor& tg = tape.value(grid);
  if (tg.rows() != T * K + 1)
    fail(ErrorKind::dimension, "token grid must have T*K+1 rows");
  if (T < cfg.segment_lengths.back())
    fail(ErrorKind::config, "window shorter than the largest segment");
  std::vector<SegmentSpec> specs = suffix_segments(cfg, T);

  std::vector<Var> parts;
  parts.reserve(K + 1);
  parts.push_back(tape.slice_rows(grid, 0, 1));  // CLS passes through
  for (size_t k = 0; k < K; ++k) {
    std::vector<size_t> temporal_rows(T);
    for (size_t t = 0; t < T; ++t) temporal_rows[t] = 1 + t * K + k;
    Var tokens_at_k = tape.gather_rows(grid, temporal_rows);
    std::vector<Var> seg_outs;
    seg_outs.reserve(specs.size());
    for (size_t s = 0; s < specs.size(); ++s) {
      std::vector<Var> probs;
      Var out = segment_attend_nodes(tape, tokens_at_k, specs[s], p, cfg,
                                     probe ? &probs : nullptr);
      if (probe)
        for (size_t h = 0; h < probs.size(); ++h)
          probe->records.push_back({layer, s, k, h, tape.value(probs[h])});
      seg_outs.push_back(out);
    }
    parts.push_back(pyramid_aggregate_nodes(tape, seg_outs, cfg, T));
  }

  // parts are laid out k-major; the grid wants t-major rows
  Var stacked = tape.concat_rows(parts);
  std::vector<size_t> order(T * K + 1);
  order[0] = 0;
  for (size_t t = 0; t < T; ++t)
    for (size_t k = 0; k < K; ++k) order[1 + t * K + k] = 1 + k * T + t;
  return tape.gather_rows(stacked, order);
}

namespace {

AttentionVars bind_attention(Tape& tape, const AttentionParams& p) {
  AttentionVars v;
  v.wq = tape.constant(p.wq);
  v.wk = tape.constant(p.wk);
  v.wv = tape.constant(p.wv);
  v.wo = tape.constant(p.wo);
  v.bo = tape.constant(p.bo);
  return v;
}

}  // namespace

Tensor segment_attend(const Tensor& tokens_at_k, SegmentSpec spec,
                      const AttentionParams& p, const HTAConfig& cfg) {
  Tape tape;
  Var out = segment_attend_nodes(tape, tape.constant(tokens_at_k), spec,
                                 bind_attention(tape, p), cfg);
  return tape.value(out);
}

Tensor pyramid_aggregate(const std::vector<Tensor>& outputs, const HTAConfig& cfg,
                         size_t T) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(outputs.size());
  for (const Tensor& o : outputs) vars.push_back(tape.constant(o));
  return tape.value(pyramid_aggregate_nodes(tape, vars, cfg, T));
}

TokenGrid hta_forward(const TokenGrid& grid, const AttentionParams& p,
                      const HTAConfig& cfg, AttentionProbe* probe) {
  Tape tape;
  Var out = hta_nodes(tape, tape.constant(grid.tokens), bind_attention(tape, p),
                      cfg, grid.T, grid.K, probe);
  TokenGrid res = grid;
  res.tokens = tape.value(out);
  return res;
}

}  // namespace phaseformer

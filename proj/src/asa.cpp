#include "phaseformer/asa.hpp"

#include <cmath>

#include "phaseformer/error.hpp"

namespace phaseformer {

const char* aggregation_name(Aggregation a) {
  return a == Aggregation::MA ? "MA" : "TFA";
}

void ASAConfig::validate() const {
  if (heads < 1 || D < 1) fail(ErrorKind::config, "heads and D must be positive");
  if (D % heads != 0) fail(ErrorKind::config, "head count must divide D");
}

std::pair<Var, Var> spatial_attend_frame_nodes(Tape& tape, Var frame_tokens,
                                               Var cls, const AttentionVars& p,
                                               const ASAConfig& cfg) {
  cfg.validate();
  const Tensor& ft = tape.value(frame_tokens);
  size_t K = ft.rows();
  if (K == 0 || ft.cols() != cfg.D)
    fail(ErrorKind::dimension, "frame tokens must be K x D with K >= 1");
  if (tape.value(cls).rows() != 1 || tape.value(cls).cols() != cfg.D)
    fail(ErrorKind::dimension, "cls must be 1 x D");
  Var together = tape.concat_rows({cls, frame_tokens});
  Var enhanced = multi_head_attention(tape, together, p, cfg.heads);
  return {tape.slice_rows(enhanced, 1, K), tape.slice_rows(enhanced, 0, 1)};
}

Var aggregate_cls_nodes(Tape& tape, Var cls_per_frame, Aggregation mode,
                        Var* weights_out) {
  const Tensor& tc = tape.value(cls_per_frame);
  size_t T = tc.rows(), D = tc.cols();
  if (T < 1 || D < 1) fail(ErrorKind::dimension, "need at least one cls row");
  if (mode == Aggregation::MA) {
    if (weights_out) {
      std::vector<double> w(T, 1.0 / static_cast<double>(T));
      *weights_out = tape.constant(Tensor::matrix(1, T, w));
    }
    return tape.mean_rows(cls_per_frame);
  }
  Var target = tape.slice_rows(cls_per_frame, T - 1, 1);
  Var scores = tape.scale(tape.matmul(target, tape.transpose(cls_per_frame)),
                          1.0 / std::sqrt(static_cast<double>(D)));
  Var weights = tape.softmax_rows(scores);
  if (weights_out) *weights_out = weights;
  return tape.matmul(weights, cls_per_frame);
}

Var asa_nodes(Tape& tape, Var grid, const AttentionVars& p, const ASAConfig& cfg,
              size_t T, size_t K) {
  cfg.validate();
  const Tensor& tg = tape.value(grid);
  if (tg.rows() != T * K + 1)
    fail(ErrorKind::dimension, "token grid must have T*K+1 rows");
  Var cls_in = tape.slice_rows(grid, 0, 1);  // one source, T replicas
  std::vector<Var> frame_outs;
  std::vector<Var> cls_rows;
  frame_outs.reserve(T);
  cls_rows.reserve(T);
  for (size_t t = 0; t < T; ++t) {
    Var frame = tape.slice_rows(grid, 1 + t * K, K);
    auto [tokens, cls] = spatial_attend_frame_nodes(tape, frame, cls_in, p, cfg);
    frame_outs.push_back(tokens);
    cls_rows.push_back(cls);
  }
  Var cls_stack = T == 1 ? cls_rows[0] : tape.concat_rows(cls_rows);
  Var cls_out = aggregate_cls_nodes(tape, cls_stack, cfg.aggregation);
  std::vector<Var> parts;
  parts.reserve(T + 1);
  parts.push_back(cls_out);
  for (Var f : frame_outs) parts.push_back(f);
  return tape.concat_rows(parts);
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

std::pair<Tensor, Tensor> spatial_attend_frame(const Tensor& frame_tokens,
                                               const Tensor& cls,
                                               const AttentionParams& p,
                                               const ASAConfig& cfg) {
  Tape tape;
  auto [tokens, out_cls] = spatial_attend_frame_nodes(
      tape, tape.constant(frame_tokens), tape.constant(cls),
      bind_attention(tape, p), cfg);
  return {tape.value(tokens), tape.value(out_cls)};
}

Tensor aggregate_cls(const Tensor& cls_per_frame, Aggregation mode) {
  Tape tape;
  return tape.value(aggregate_cls_nodes(tape, tape.constant(cls_per_frame), mode));
}

TokenGrid asa_forward(const TokenGrid& grid, const AttentionParams& p,
                      const ASAConfig& cfg) {
  Tape tape;
  Var out = asa_nodes(tape, tape.constant(grid.tokens), bind_attention(tape, p),
                      cfg, grid.T, grid.K);
  TokenGrid res = grid;
  res.tokens = tape.value(out);
  return res;
}

}  // namespace phaseformer

#include "phaseformer/model.hpp"

#include <fstream>
#include <unordered_map>

#include "phaseformer/error.hpp"
#include "phaseformer/wire.hpp"

namespace phaseformer {

void ModelConfig::finalize() {
  patch.D = D;
  hta.D = D;
  hta.heads = heads;
  asa.D = D;
  asa.heads = heads;
  if (hta.segment_lengths.empty())
    hta.segment_lengths = HTAConfig::default_lengths(patch.T);
}

void ModelConfig::validate() const {
  if (L < 1) fail(ErrorKind::config, "need at least one block");
  if (num_phases < 2) fail(ErrorKind::config, "need at least two phase classes");
  if (mlp_ratio < 1) fail(ErrorKind::config, "mlp_ratio must be positive");
  patch.validate();
  if (patch.D != D) fail(ErrorKind::config, "embedding width disagrees with model width");
  hta.validate();
  if (hta.D != D || hta.heads != heads)
    fail(ErrorKind::config, "temporal attention config disagrees with model");
  if (hta.segment_lengths.back() != patch.T)
    fail(ErrorKind::config, "largest segment must equal the window length");
  asa.validate();
  if (asa.D != D || asa.heads != heads)
    fail(ErrorKind::config, "spatial attention config disagrees with model");
}

namespace {

Tensor ones(std::vector<size_t> shape) { return Tensor::full(std::move(shape), 1.0); }

AttentionParams alloc_attention(size_t D) {
  AttentionParams a;
  a.wq = Tensor(std::vector<size_t>{D, D});
  a.wk = Tensor(std::vector<size_t>{D, D});
  a.wv = Tensor(std::vector<size_t>{D, D});
  a.wo = Tensor(std::vector<size_t>{D, D});
  a.bo = Tensor(std::vector<size_t>{1, D});
  return a;
}

}  // namespace

ModelParams alloc_params(const ModelConfig& cfg) {
  cfg.validate();
  size_t D = cfg.D, K = cfg.patch.K(), hidden = cfg.mlp_ratio * D;
  ModelParams p;
  p.embed.patch_w = Tensor(std::vector<size_t>{cfg.patch.patch_len(), D});
  p.embed.patch_b = Tensor(std::vector<size_t>{1, D});
  p.embed.cls_token = Tensor(std::vector<size_t>{1, D});
  p.embed.pos_spatial = Tensor(std::vector<size_t>{K, D});
  p.embed.pos_temporal = Tensor(std::vector<size_t>{cfg.patch.T, D});
  p.embed.pos_cls = Tensor(std::vector<size_t>{1, D});
  p.blocks.resize(cfg.L);
  for (BlockParams& b : p.blocks) {
    b.ln1_g = ones({1, D});
    b.ln1_b = Tensor(std::vector<size_t>{1, D});
    b.temporal = alloc_attention(D);
    b.ln2_g = ones({1, D});
    b.ln2_b = Tensor(std::vector<size_t>{1, D});
    b.spatial = alloc_attention(D);
    b.ln3_g = ones({1, D});
    b.ln3_b = Tensor(std::vector<size_t>{1, D});
    b.mlp_w1 = Tensor(std::vector<size_t>{D, hidden});
    b.mlp_b1 = Tensor(std::vector<size_t>{1, hidden});
    b.mlp_w2 = Tensor(std::vector<size_t>{hidden, D});
    b.mlp_b2 = Tensor(std::vector<size_t>{1, D});
  }
  p.final_ln_g = ones({1, D});
  p.final_ln_b = Tensor(std::vector<size_t>{1, D});
  p.head_w = Tensor(std::vector<size_t>{D, cfg.num_phases});
  p.head_b = Tensor(std::vector<size_t>{1, cfg.num_phases});
  return p;
}

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  ModelParams p = alloc_params(cfg);
  const double std = 0.02;
  auto tn = [&](Tensor& t) {
    for (double& v : t.data) v = rng.trunc_normal(std);
  };
  tn(p.embed.patch_w);
  tn(p.embed.pos_spatial);
  tn(p.embed.pos_temporal);
  tn(p.embed.pos_cls);
  for (BlockParams& b : p.blocks) {
    tn(b.temporal.wq);
    tn(b.temporal.wk);
    tn(b.temporal.wv);
    tn(b.temporal.wo);
    tn(b.spatial.wq);
    tn(b.spatial.wk);
    tn(b.spatial.wv);
    tn(b.spatial.wo);
    tn(b.mlp_w1);
    tn(b.mlp_w2);
  }
  tn(p.head_w);
  return p;
}

void visit_params(ModelParams& p, const ModelConfig& cfg, const ParamVisitor& fn) {
  fn("embed.patch_w", p.embed.patch_w, 0);
  fn("embed.patch_b", p.embed.patch_b, 0);
  fn("embed.cls", p.embed.cls_token, 0);
  fn("embed.pos_spatial", p.embed.pos_spatial, 0);
  fn("embed.pos_temporal", p.embed.pos_temporal, 0);
  fn("embed.pos_cls", p.embed.pos_cls, 0);
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    BlockParams& b = p.blocks[i];
    std::string pre = "block" + std::to_string(i) + ".";
    size_t depth = i + 1;
    fn(pre + "ln1.g", b.ln1_g, depth);
    fn(pre + "ln1.b", b.ln1_b, depth);
    fn(pre + "temporal.wq", b.temporal.wq, depth);
    fn(pre + "temporal.wk", b.temporal.wk, depth);
    fn(pre + "temporal.wv", b.temporal.wv, depth);
    fn(pre + "temporal.wo", b.temporal.wo, depth);
    fn(pre + "temporal.bo", b.temporal.bo, depth);
    fn(pre + "ln2.g", b.ln2_g, depth);
    fn(pre + "ln2.b", b.ln2_b, depth);
    fn(pre + "spatial.wq", b.spatial.wq, depth);
    fn(pre + "spatial.wk", b.spatial.wk, depth);
    fn(pre + "spatial.wv", b.spatial.wv, depth);
    fn(pre + "spatial.wo", b.spatial.wo, depth);
    fn(pre + "spatial.bo", b.spatial.bo, depth);
    fn(pre + "ln3.g", b.ln3_g, depth);
    fn(pre + "ln3.b", b.ln3_b, depth);
    fn(pre + "mlp.w1", b.mlp_w1, depth);
    fn(pre + "mlp.b1", b.mlp_b1, depth);
    fn(pre + "mlp.w2", b.mlp_w2, depth);
    fn(pre + "mlp.b2", b.mlp_b2, depth);
  }
  size_t top = cfg.L + 1;
  fn("final_ln.g", p.final_ln_g, top);
  fn("final_ln.b", p.final_ln_b, top);
  fn("head.w", p.head_w, top);
  fn("head.b", p.head_b, top);
}

BoundModel bind_model(Tape& tape, ModelParams& params, const ModelConfig& cfg,
                      bool requires_grad) {
  BoundModel bm;
  std::unordered_map<std::string, Var> by_name;
  visit_params(params, cfg, [&](const std::string& name, Tensor& t, size_t) {
    Var v = tape.leaf(t, requires_grad);
    bm.flat.push_back(v);
    by_name.emplace(name, v);
  });
  auto get = [&](const std::string& name) { return by_name.at(name); };
  bm.embed = {get("embed.patch_w"),     get("embed.patch_b"),
              get("embed.cls"),         get("embed.pos_spatial"),
              get("embed.pos_temporal"), get("embed.pos_cls")};
  bm.blocks.resize(cfg.L);
  for (size_t i = 0; i < cfg.L; ++i) {
    std::string pre = "block" + std::to_string(i) + ".";
    BoundBlock& b = bm.blocks[i];
    b.ln1_g = get(pre + "ln1.g");
    b.ln1_b = get(pre + "ln1.b");
    b.temporal = {get(pre + "temporal.wq"), get(pre + "temporal.wk"),
                  get(pre + "temporal.wv"), get(pre + "temporal.wo"),
                  get(pre + "temporal.bo")};
    b.ln2_g = get(pre + "ln2.g");
    b.ln2_b = get(pre + "ln2.b");
    b.spatial = {get(pre + "spatial.wq"), get(pre + "spatial.wk"),
                 get(pre + "spatial.wv"), get(pre + "spatial.wo"),
                 get(pre + "spatial.bo")};
    b.ln3_g = get(pre + "ln3.g");
    b.ln3_b = get(pre + "ln3.b");
    b.mlp_w1 = get(pre + "mlp.w1");
    b.mlp_b1 = get(pre + "mlp.b1");
    b.mlp_w2 = get(pre + "mlp.w2");
    b.mlp_b2 = get(pre + "mlp.b2");
  }
  bm.final_ln_g = get("final_ln.g");
  bm.final_ln_b = get("final_ln.b");
  bm.head_w = get("head.w");
  bm.head_b = get("head.b");
  return bm;
}

Var block_forward_nodes(Tape& tape, Var grid, const BoundBlock& bp,
                        const ModelConfig& cfg, size_t T, size_t K,
                        AttentionProbe* probe, size_t layer) {
  const Tensor& tg = tape.value(grid);
  if (tg.rows() != T * K + 1 || tg.cols() != cfg.D)
    fail(ErrorKind::dimension, "token grid shape disagrees with the model config");

  // temporal stage: patch rows get attention + residual, CLS row carries over
  Var n1 = tape.layer_norm(grid, bp.ln1_g, bp.ln1_b, kLayerNormEps);
  Var h = hta_nodes(tape, n1, bp.temporal, cfg.hta, T, K, probe, layer);
  Var cls_in = tape.slice_rows(grid, 0, 1);
  Var xt_patch = tape.add(tape.slice_rows(h, 1, T * K), tape.slice_rows(grid, 1, T * K));
  Var xt = tape.concat_rows({cls_in, xt_patch});

  // spatial stage with residual
  Var n2 = tape.layer_norm(xt, bp.ln2_g, bp.ln2_b, kLayerNormEps);
  Var xst = tape.add(asa_nodes(tape, n2, bp.spatial, cfg.asa, T, K), xt);

  // MLP with residual
  Var n3 = tape.layer_norm(xst, bp.ln3_g, bp.ln3_b, kLayerNormEps);
  Var mid = tape.gelu(tape.linear(n3, bp.mlp_w1, bp.mlp_b1));
  return tape.add(tape.linear(mid, bp.mlp_w2, bp.mlp_b2), xst);
}

Var model_logits_nodes(Tape& tape, Var patches, const BoundModel& bound,
                       const ModelConfig& cfg, size_t T, size_t K,
                       AttentionProbe* probe) {
  Var grid = embed_tokens(tape, patches, bound.embed, T, K);
  for (size_t i = 0; i < bound.blocks.size(); ++i)
    grid = block_forward_nodes(tape, grid, bound.blocks[i], cfg, T, K, probe, i);
  Var cls = tape.slice_rows(grid, 0, 1);
  Var normed = tape.layer_norm(cls, bound.final_ln_g, bound.final_ln_b, kLayerNormEps);
  return tape.linear(normed, bound.head_w, bound.head_b);
}

namespace {

AttentionVars bind_attention(Tape& tape, const AttentionParams& p) {
  return {tape.constant(p.wq), tape.constant(p.wk), tape.constant(p.wv),
          tape.constant(p.wo), tape.constant(p.bo)};
}

BoundBlock bind_block(Tape& tape, BlockParams& bp) {
  BoundBlock b;
  b.ln1_g = tape.constant(bp.ln1_g);
  b.ln1_b = tape.constant(bp.ln1_b);
  b.temporal = bind_attention(tape, bp.temporal);
  b.ln2_g = tape.constant(bp.ln2_g);
  b.ln2_b = tape.constant(bp.ln2_b);
  b.spatial = bind_attention(tape, bp.spatial);
  b.ln3_g = tape.constant(bp.ln3_g);
  b.ln3_b = tape.constant(bp.ln3_b);
  b.mlp_w1 = tape.constant(bp.mlp_w1);
  b.mlp_b1 = tape.constant(bp.mlp_b1);
  b.mlp_w2 = tape.constant(bp.mlp_w2);
  b.mlp_b2 = tape.constant(bp.mlp_b2);
  return b;
}

}  // namespace

TokenGrid block_forward(const TokenGrid& grid, BlockParams& bp,
                        const ModelConfig& cfg) {
  Tape tape;
  Var out = block_forward_nodes(tape, tape.constant(grid.tokens),
                                bind_block(tape, bp), cfg, grid.T, grid.K);
  TokenGrid res = grid;
  res.tokens = tape.value(out);
  return res;
}

PhasePrediction forward(const FrameVolume& vol, ModelParams& params,
                        const ModelConfig& cfg, AttentionProbe* probe) {
  cfg.validate();
  Tensor patches = patchify(vol, cfg.patch);
  Tape tape;
  BoundModel bound = bind_model(tape, params, cfg, /*requires_grad=*/false);
  Var logits = model_logits_nodes(tape, tape.constant(std::move(patches)), bound,
                                  cfg, cfg.patch.T, cfg.patch.K(), probe);
  const Tensor& lv = tape.value(logits);
  PhasePrediction pred;
  pred.logits.assign(lv.data.begin(), lv.data.end());
  pred.target_index = vol.target_index;
  pred.phase = 0;
  for (size_t c = 1; c < pred.logits.size(); ++c)
    if (pred.logits[c] > pred.logits[pred.phase]) pred.phase = c;
  return pred;
}

void adapt_to_window(ModelParams& params, ModelConfig& cfg, size_t T_new) {
  if (T_new == cfg.patch.T) return;
  params.embed.pos_temporal = resize_temporal_positions(params.embed.pos_temporal, T_new);
  cfg.patch.T = T_new;
  cfg.hta.segment_lengths = HTAConfig::default_lengths(T_new);
  cfg.validate();
}

namespace {

constexpr char kMagic[] = "SGFW1";

void put_config(std::string& buf, const ModelConfig& cfg) {
  wire::put_u32(buf, static_cast<uint32_t>(cfg.L));
  wire::put_u32(buf, static_cast<uint32_t>(cfg.D));
  wire::put_u32(buf, static_cast<uint32_t>(cfg.heads));
  wire::put_u32(buf, static_cast<uint32_t>(cfg.mlp_ratio));
  wire::put_u32(buf, static_cast<uint32_t>(cfg.num_phases));
  wire::put_u32(buf, static_cast<uint32_t>(cfg.patch.T));
  wire::put_u32(buf, static_cast<uint32_t>(cfg.patch.R));
  wire::put_u32(buf, static_cast<uint32_t>(cfg.patch.H));
  wire::put_u32(buf, static_cast<uint32_t>(cfg.patch.W));
  wire::put_u32(buf, static_cast<uint32_t>(cfg.patch.C_in));
  wire::put_u32(buf, static_cast<uint32_t>(cfg.patch.P));
  wire::put_u32(buf, static_cast<uint32_t>(cfg.hta.segment_lengths.size()));
  for (size_t len : cfg.hta.segment_lengths)
    wire::put_u32(buf, static_cast<uint32_t>(len));
  wire::put_f64(buf, cfg.hta.alpha);
  wire::put_f64(buf, cfg.hta.beta);
  wire::put_u32(buf, cfg.asa.aggregation == Aggregation::TFA ? 1u : 0u);
}

ModelConfig read_config(wire::Reader& cur) {
  ModelConfig cfg;
  cfg.L = cur.u32();
  cfg.D = cur.u32();
  cfg.heads = cur.u32();
  cfg.mlp_ratio = cur.u32();
  cfg.num_phases = cur.u32();
  cfg.patch.T = cur.u32();
  cfg.patch.R = cur.u32();
  cfg.patch.H = cur.u32();
  cfg.patch.W = cur.u32();
  cfg.patch.C_in = cur.u32();
  cfg.patch.P = cur.u32();
  size_t m = cur.u32();
  if (m == 0 || m > 64) fail(ErrorKind::format, "weight file has a bad segment count");
  cfg.hta.segment_lengths.resize(m);
  for (size_t s = 0; s < m; ++s) cfg.hta.segment_lengths[s] = cur.u32();
  cfg.hta.alpha = cur.f64();
  cfg.hta.beta = cur.f64();
  uint32_t agg = cur.u32();
  if (agg > 1) fail(ErrorKind::format, "weight file has a bad aggregation id");
  cfg.asa.aggregation = agg == 1 ? Aggregation::TFA : Aggregation::MA;
  cfg.patch.D = cfg.D;
  cfg.hta.D = cfg.D;
  cfg.hta.heads = cfg.heads;
  cfg.asa.D = cfg.D;
  cfg.asa.heads = cfg.heads;
  return cfg;
}

}  // namespace

void save_params(const std::string& path, ModelParams& params,
                 const ModelConfig& cfg) {
  cfg.validate();
  std::string buf(kMagic, 5);
  put_config(buf, cfg);
  uint32_t count = 0;
  visit_params(params, cfg, [&](const std::string&, Tensor&, size_t) { ++count; });
  wire::put_u32(buf, count);
  visit_params(params, cfg, [&](const std::string& name, Tensor& t, size_t) {
    wire::put_u32(buf, static_cast<uint32_t>(name.size()));
    buf.append(name);
    wire::put_u32(buf, static_cast<uint32_t>(t.rank()));
    for (size_t d : t.shape()) wire::put_u32(buf, static_cast<uint32_t>(d));
    for (double v : t.data) wire::put_f64(buf, v);
  });
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot create weight file: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorKind::io, "short write to weight file: " + path);
}

std::pair<ModelConfig, ModelParams> load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open weight file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  wire::Reader cur(bytes);
  if (cur.str(5) != kMagic) fail(ErrorKind::format, "not a weight file (bad magic)");
  ModelConfig cfg = read_config(cur);
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::format, std::string("weight file config invalid: ") + e.what());
  }

  struct Record {
    std::vector<size_t> shape;
    std::vector<double> data;
  };
  std::unordered_map<std::string, Record> records;
  uint32_t count = cur.u32();
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = cur.u32();
    if (name_len == 0 || name_len > 256)
      fail(ErrorKind::format, "weight record has a bad name length");
    std::string name = cur.str(name_len);
    uint32_t ndim = cur.u32();
    if (ndim == 0 || ndim > 2) fail(ErrorKind::format, "weight record has a bad rank");
    Record rec;
    size_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      size_t dim = cur.u32();
      rec.shape.push_back(dim);
      n *= dim;
    }
    if (n == 0) fail(ErrorKind::format, "weight record has a zero dimension");
    rec.data.resize(n);
    for (size_t j = 0; j < n; ++j) rec.data[j] = cur.f64();
    if (!records.emplace(std::move(name), std::move(rec)).second)
      fail(ErrorKind::format, "duplicate weight record");
  }
  if (!cur.done()) fail(ErrorKind::format, "trailing bytes after weight records");

  ModelParams params = alloc_params(cfg);
  size_t used = 0;
  visit_params(params, cfg, [&](const std::string& name, Tensor& t, size_t) {
    auto it = records.find(name);
    if (it == records.end())
      fail(ErrorKind::format, "weight file is missing record: " + name);
    if (it->second.shape != t.shape())
      fail(ErrorKind::format, "weight record shape mismatch: " + name);
    t.data = std::move(it->second.data);
    ++used;
  });
  if (used != records.size())
    fail(ErrorKind::format, "weight file has records the config does not expect");
  return {cfg, std::move(params)};
}

}  // namespace phaseformer

#include "phaseformer/tokenizer.hpp"

#include <fstream>

#include "phaseformer/error.hpp"
#include "phaseformer/wire.hpp"

namespace phaseformer {

void PatchConfig::validate() const {
  if (T < 1 || R < 1) fail(ErrorKind::config, "T and R must be at least 1");
  if (P < 1 || H < 1 || W < 1 || C_in < 1 || D < 1)
    fail(ErrorKind::config, "frame/patch/embedding dims must be positive");
  if (H % P != 0 || W % P != 0)
    fail(ErrorKind::config, "patch side must divide both frame dimensions");
}

void FrameVolume::validate() const {
  if (T == 0 || C_in == 0 || H == 0 || W == 0)
    fail(ErrorKind::input, "frame volume dims must be positive");
  if (frames.size() != T * C_in * H * W)
    fail(ErrorKind::input, "frame buffer length does not match dims");
  if (source_indices.size() != T)
    fail(ErrorKind::input, "need one source index per frame");
  for (size_t j = 1; j < T; ++j)
    if (source_indices[j] < source_indices[j - 1])
      fail(ErrorKind::input, "source indices must be non-decreasing");
  if (source_indices.back() != target_index)
    fail(ErrorKind::input, "last source index must be the target frame");
}

std::vector<uint64_t> sample_window(uint64_t video_length, uint64_t target_index,
                                    const PatchConfig& cfg) {
  cfg.validate();
  if (target_index >= video_length)
    fail(ErrorKind::index, "target frame index past end of video");
  std::vector<uint64_t> out(cfg.T);
  for (size_t j = 0; j < cfg.T; ++j) {
    uint64_t back = cfg.R * (cfg.T - 1 - j);
    out[j] = back > target_index ? 0 : target_index - back;
  }
  return out;
}

Tensor patchify(const FrameVolume& vol, const PatchConfig& cfg) {
  cfg.validate();
  vol.validate();
  if (vol.T != cfg.T || vol.C_in != cfg.C_in || vol.H != cfg.H || vol.W != cfg.W)
    fail(ErrorKind::dimension, "frame volume dims do not match the patch config");
  size_t gh = cfg.H / cfg.P, gw = cfg.W / cfg.P;
  size_t K = gh * gw, plen = cfg.patch_len();
  Tensor out(std::vector<size_t>{cfg.T * K, plen});
  for (size_t t = 0; t < cfg.T; ++t) {
    for (size_t gr = 0; gr < gh; ++gr) {
      for (size_t gc = 0; gc < gw; ++gc) {
        size_t k = gr * gw + gc;
        double* row = out.data.data() + (t * K + k) * plen;
        size_t o = 0;
        for (size_t c = 0; c < cfg.C_in; ++c)
          for (size_t py = 0; py < cfg.P; ++py)
            for (size_t px = 0; px < cfg.P; ++px)
              row[o++] = vol.frames[((t * cfg.C_in + c) * cfg.H + gr * cfg.P + py) * cfg.W +
                                    gc * cfg.P + px];
      }
    }
  }
  return out;
}

Tensor resize_temporal_positions(const Tensor& pos_temporal, size_t T_test) {
  size_t T_train = pos_temporal.rows(), D = pos_temporal.cols();
  if (T_train < 2) fail(ErrorKind::argument, "need at least two temporal positions to resize");
  if (T_test < 1) fail(ErrorKind::argument, "resized temporal length must be positive");
  if (T_test == T_train) return pos_temporal;
  Tensor out(std::vector<size_t>{T_test, D});
  for (size_t i = 0; i < T_test; ++i) {
    double x = T_test == 1 ? 0.0
                           : static_cast<double>(i) * static_cast<double>(T_train - 1) /
                                 static_cast<double>(T_test - 1);
    size_t lo = static_cast<size_t>(x);
    if (lo >= T_train - 1) lo = T_train - 2;
    double w = x - static_cast<double>(lo);
    for (size_t jd = 0; jd < D; ++jd)
      out.data[i * D + jd] =
          (1.0 - w) * pos_temporal.at(lo, jd) + w * pos_temporal.at(lo + 1, jd);
  }
  return out;
}

Var embed_tokens(Tape& tape, Var patches, const EmbeddingVars& vars, size_t T,
                 size_t K) {
  const Tensor& tp = tape.value(patches);
  if (tp.rows() != T * K) fail(ErrorKind::dimension, "patch rows must equal T*K");
  if (tape.value(vars.pos_temporal).rows() != T)
    fail(ErrorKind::input, "temporal position table does not cover the window; resize first");
  if (tape.value(vars.pos_spatial).rows() != K)
    fail(ErrorKind::dimension, "spatial position table must have K rows");
  Var projected = tape.linear(patches, vars.patch_w, vars.patch_b);
  Var spatial = tape.repeat_rows(vars.pos_spatial, T);            // row t*K+k = pos_spatial[k]
  Var temporal = tape.repeat_interleave_rows(vars.pos_temporal, K);  // row t*K+k = pos_temporal[t]
  Var grid = tape.add(tape.add(projected, spatial), temporal);
  Var cls = tape.add(vars.cls_token, vars.pos_cls);
  return tape.concat_rows({cls, grid});
}

TokenGrid embed(const FrameVolume& vol, const EmbeddingParams& params,
                const PatchConfig& cfg) {
  Tensor patches = patchify(vol, cfg);
  Tape tape;
  EmbeddingVars vars;
  vars.patch_w = tape.constant(params.patch_w);
  vars.patch_b = tape.constant(params.patch_b);
  vars.cls_token = tape.constant(params.cls_token);
  vars.pos_spatial = tape.constant(params.pos_spatial);
  vars.pos_temporal = tape.constant(params.pos_temporal);
  vars.pos_cls = tape.constant(params.pos_cls);
  Var grid = embed_tokens(tape, tape.constant(std::move(patches)), vars, cfg.T, cfg.K());
  TokenGrid out;
  out.tokens = tape.value(grid);
  out.T = cfg.T;
  out.K = cfg.K();
  out.D = cfg.D;
  return out;
}

FrameVolume load_frame_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open frame volume file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  wire::Reader cur(bytes);

  FrameVolume vol;
  vol.T = cur.u32();
  vol.C_in = cur.u32();
  vol.H = cur.u32();
  vol.W = cur.u32();
  uint32_t target_low = cur.u32();
  if (vol.T == 0 || vol.C_in == 0 || vol.H == 0 || vol.W == 0)
    fail(ErrorKind::format, "frame volume header has a zero dimension");

  vol.source_indices.resize(vol.T);
  for (size_t j = 0; j < vol.T; ++j) vol.source_indices[j] = cur.u64();
  vol.target_index = vol.source_indices.back();
  if (static_cast<uint32_t>(vol.target_index & 0xFFFFFFFFu) != target_low)
    fail(ErrorKind::format, "header target index does not match last source index");
  for (size_t j = 1; j < vol.T; ++j)
    if (vol.source_indices[j] < vol.source_indices[j - 1])
      fail(ErrorKind::format, "source indices must be non-decreasing");

  size_t n = vol.T * vol.C_in * vol.H * vol.W;
  if (cur.left() != n * 4) fail(ErrorKind::format, "frame volume payload length mismatch");
  vol.frames.resize(n);
  for (size_t i = 0; i < n; ++i) vol.frames[i] = static_cast<double>(cur.f32());
  return vol;
}

void save_frame_volume(const std::string& path, const FrameVolume& vol) {
  vol.validate();
  std::string buf;
  buf.reserve(20 + vol.T * 8 + vol.frames.size() * 4);
  wire::put_u32(buf, static_cast<uint32_t>(vol.T));
  wire::put_u32(buf, static_cast<uint32_t>(vol.C_in));
  wire::put_u32(buf, static_cast<uint32_t>(vol.H));
  wire::put_u32(buf, static_cast<uint32_t>(vol.W));
  wire::put_u32(buf, static_cast<uint32_t>(vol.target_index & 0xFFFFFFFFu));
  for (uint64_t s : vol.source_indices) wire::put_u64(buf, s);
  for (double v : vol.frames) wire::put_f32(buf, static_cast<float>(v));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot create frame volume file: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorKind::io, "short write to frame volume file: " + path);
}

}  // namespace phaseformer

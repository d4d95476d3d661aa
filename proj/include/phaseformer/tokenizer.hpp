#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phaseformer/tape.hpp"
#include "phaseformer/tensor.hpp"

namespace phaseformer {

struct PatchConfig {
  size_t T = 16;    // temporal resolution (frames per window)
  size_t R = 4;     // frame-sampling rate
  size_t H = 224;   // frame height (pixels)
  size_t W = 224;   // frame width (pixels)
  size_t C_in = 3;  // channels
  size_t P = 16;    // patch side (pixels)
  size_t D = 768;   // embedding dim

  size_t K() const { return (H / P) * (W / P); }
  size_t patch_len() const { return C_in * P * P; }
  void validate() const;  // config error on violation
};

// A sampled stack of T frames ending at the frame to classify.
struct FrameVolume {
  size_t T = 0, C_in = 0, H = 0, W = 0;
  std::vector<double> frames;  // T x C_in x H x W, row-major
  std::vector<uint64_t> source_indices;  // absolute, non-decreasing
  uint64_t target_index = 0;             // == source_indices.back()

  void validate() const;  // input error on violation
};

struct TokenGrid {
  Tensor tokens;  // (T*K+1) x D, row 0 = CLS, then frame-major (t slow, k fast)
  size_t T = 0, K = 0, D = 0;
};

struct EmbeddingParams {
  Tensor patch_w;       // (C_in*P^2) x D
  Tensor patch_b;       // 1 x D
  Tensor cls_token;     // 1 x D
  Tensor pos_spatial;   // K x D
  Tensor pos_temporal;  // T_train x D
  Tensor pos_cls;       // 1 x D
};

// Indices of the T frames feeding a window that ends at target_index:
// target_index - R*(T-1-j), clamped at 0. The target sits at position T-1,
// so nothing after it is ever read.
std::vector<uint64_t> sample_window(uint64_t video_length, uint64_t target_index,
                                    const PatchConfig& cfg);

// (T*K) x (C_in*P^2): patches in raster order per frame, frame-major rows,
// each patch flattened channel-major.
Tensor patchify(const FrameVolume& vol, const PatchConfig& cfg);

// Linear interpolation along the temporal axis; exact identity when
// T_test equals the stored length.
Tensor resize_temporal_positions(const Tensor& pos_temporal, size_t T_test);

// Tape-level embedding so gradients reach the embedding parameters. `patches`
// is patchify() output as a leaf/constant; result is the (T*K+1) x D grid.
struct EmbeddingVars {
  Var patch_w, patch_b, cls_token, pos_spatial, pos_temporal, pos_cls;
};
Var embed_tokens(Tape& tape, Var patches, const EmbeddingVars& vars, size_t T,
                 size_t K);

// Value-level convenience wrapper over embed_tokens.
TokenGrid embed(const FrameVolume& vol, const EmbeddingParams& params,
                const PatchConfig& cfg);

// FVOL1 container: 5 LE u32 {T, C_in, H, W, low 32 bits of target index},
// T LE u64 source indices, then T*C_in*H*W LE f32 samples.
FrameVolume load_frame_volume(const std::string& path);
void save_frame_volume(const std::string& path, const FrameVolume& vol);

}  // namespace phaseformer

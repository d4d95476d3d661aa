#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phaseformer/model.hpp"

namespace phaseformer {

struct OptimConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;   // decoupled, scaled by the per-depth lr
  double layer_decay = 0.75;   // per-depth lr multiplier
  size_t epochs = 50;
  size_t batch_size = 8;
  uint64_t seed = 0;
  // Stop once an epoch's training accuracy reaches this; >1 never triggers.
  double target_accuracy = 2.0;

  void validate() const;  // config error on violation
};

// A parameter tensor with its serialization name and layer-decay depth.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
  size_t depth = 0;
};

// Every model parameter in visit_params order, so gradients read off a
// BoundModel's flat list line up index for index.
std::vector<ParamRef> model_param_refs(ModelParams& params, const ModelConfig& cfg);

// First/second moment buffers, one pair per parameter, plus the step count.
struct OptimState {
  std::vector<std::vector<double>> m, v;
  size_t step = 0;
};

OptimState make_optim_state(const std::vector<ParamRef>& params);

// One AdamW update with bias correction and decoupled weight decay. The
// effective step size for a parameter at depth d is
// lr * layer_decay^(max_depth - d), max_depth taken over `params`.
// Non-finite gradients abort with a training error naming the parameter.
void adamw_step(const std::vector<ParamRef>& params,
                const std::vector<std::vector<double>>& grads,
                OptimState& state, const OptimConfig& cfg);

// ---- synthetic phase videos ----

struct SyntheticDatasetSpec {
  size_t num_videos = 2;
  size_t frames_per_video = 100;
  size_t num_phases = 7;
  double noise_std = 0.05;
  uint64_t seed = 0;

  void validate() const;  // config error on violation
};

// One generated video: contiguous phase spans, every phase present, each
// phase with its own mean intensity plus a fixed spatial pattern.
struct SyntheticVideo {
  std::vector<double> frames;    // frames_per_video x (C_in*H*W)
  std::vector<size_t> phase_of;  // per-frame label
};

struct LabeledWindow {
  FrameVolume volume;
  size_t label = 0;  // phase of the target frame
};

std::vector<SyntheticVideo> generate_videos(const SyntheticDatasetSpec& spec,
                                            const PatchConfig& pc);

// Every frame of the video as a sampling target, windows via sample_window.
std::vector<LabeledWindow> windows_from_video(const SyntheticVideo& video,
                                              const PatchConfig& pc);

// Repack a whole video as one FrameVolume (frame j = source frame j), the
// form the file container stores and streaming evaluation consumes.
FrameVolume video_to_volume(const SyntheticVideo& video, const PatchConfig& pc);

// All windows of all generated videos, flattened in video order.
std::vector<LabeledWindow> generate_synthetic(const SyntheticDatasetSpec& spec,
                                              const PatchConfig& pc);

// ---- training loop ----

struct EpochStats {
  size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
};

// JSON lines, one {"epoch":..,"loss":..,"accuracy":..} object per epoch.
std::string to_json_lines(const TrainReport& report);

// Minibatch AdamW training of the phase classifier on labeled windows.
// Single-threaded and bit-reproducible for a fixed config and seed; epochs
// stop early once target_accuracy is reached. Updates params in place.
TrainReport train(ModelParams& params, const ModelConfig& cfg,
                  const std::vector<LabeledWindow>& data,
                  const OptimConfig& opt);

}  // namespace phaseformer

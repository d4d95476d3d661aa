#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "phaseformer/model.hpp"

namespace phaseformer {

// Per-frame phase labels for one video.
struct PhaseSequence {
  std::vector<size_t> labels;
  double fps = 1.0;

  void validate() const;  // input error on violation
};

struct PhaseCounts {
  size_t tp = 0, fp = 0, fn = 0;
};

// Frame-wise counts per phase id, sized to the largest label seen plus one.
// The two sequences must have equal length.
std::vector<PhaseCounts> confusion(const PhaseSequence& gt,
                                   const PhaseSequence& pred);

enum class EvalMode { unrelaxed, relaxed };
const char* eval_mode_name(EvalMode mode);

struct PhaseMetrics {
  bool present = false;  // phase appears in ground truth or prediction
  double precision = 0.0, recall = 0.0, jaccard = 0.0, f1 = 0.0;
};

struct MetricReport {
  EvalMode mode = EvalMode::unrelaxed;
  double accuracy = 0.0;
  std::vector<PhaseMetrics> per_phase;
  // averages over present phases only
  double macro_precision = 0.0, macro_recall = 0.0;
  double macro_jaccard = 0.0, macro_f1 = 0.0;
};

// Frame-wise metrics. Relaxed mode first forgives boundary confusion: a
// wrong frame within round(10*fps) frames of a ground-truth transition whose
// prediction equals the phase on the other side of that transition is
// recounted as correct for every metric; overlapping transition windows
// accept either neighbor.
MetricReport metrics(const PhaseSequence& gt, const PhaseSequence& pred,
                     EvalMode mode);

std::string to_json(const MetricReport& report);

// Mean and population standard deviation of each metric across videos.
struct Aggregate {
  double mean = 0.0, stddev = 0.0;
};

struct EvalSummary {
  Aggregate accuracy, macro_precision, macro_recall, macro_jaccard, macro_f1;
  size_t videos = 0;
};

EvalSummary summarize(const std::vector<MetricReport>& reports);
std::string to_json(const EvalSummary& summary);

// Read-only frame access for streaming evaluation; implementations decide
// where frames come from (file, synthetic buffer, ...).
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual size_t num_frames() const = 0;
  virtual size_t frame_len() const = 0;  // doubles per frame, C_in*H*W
  virtual void read_frame(size_t index, double* out) const = 0;
};

// Adapts a FrameVolume that holds a whole video (frame j = source frame j)
// to the streaming interface. Keeps a pointer; the volume must outlive it.
class VolumeFrameSource final : public FrameSource {
 public:
  explicit VolumeFrameSource(const FrameVolume& vol) : vol_(&vol) {}
  size_t num_frames() const override { return vol_->T; }
  size_t frame_len() const override { return vol_->C_in * vol_->H * vol_->W; }
  void read_frame(size_t index, double* out) const override;

 private:
  const FrameVolume* vol_;
};

// Assemble the sampling window that targets one frame. Only frames at or
// before the target are ever read.
FrameVolume read_window(const FrameSource& source, const PatchConfig& cfg,
                        size_t target);

struct VideoEval {
  std::vector<PhasePrediction> predictions;  // one per frame, ascending
  MetricReport unrelaxed, relaxed;
};

// One forward pass per frame over its causal window, then both metric modes
// against the annotations. Annotation length must match the video.
VideoEval evaluate_video(ModelParams& params, const ModelConfig& cfg,
                         const FrameSource& source,
                         const PhaseSequence& annotations);

// Annotation CSV: optional "frame_index,phase_id" header, then one row per
// frame with frame_index equal to the row number.
std::vector<size_t> load_annotations(const std::string& path);
void save_annotations(const std::string& path, const std::vector<size_t>& labels);

// Prediction CSV: "target_index,phase,logit_0..logit_{C-1}"; logits survive
// the round trip exactly.
void save_predictions_csv(const std::string& path,
                          const std::vector<PhasePrediction>& preds);
std::vector<PhasePrediction> load_predictions_csv(const std::string& path);

}  // namespace phaseformer

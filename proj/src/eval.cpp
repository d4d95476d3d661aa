#include "phaseformer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "phaseformer/error.hpp"

namespace phaseformer {

void PhaseSequence::validate() const {
  if (labels.empty()) fail(ErrorKind::input, "phase sequence is empty");
  if (!(fps > 0.0) || !std::isfinite(fps))
    fail(ErrorKind::input, "fps must be positive and finite");
}

std::vector<PhaseCounts> confusion(const PhaseSequence& gt,
                                   const PhaseSequence& pred) {
  gt.validate();
  pred.validate();
  if (gt.labels.size() != pred.labels.size())
    fail(ErrorKind::input, "ground truth and prediction lengths differ");
  size_t phases = 0;
  for (size_t v : gt.labels) phases = std::max(phases, v + 1);
  for (size_t v : pred.labels) phases = std::max(phases, v + 1);
  std::vector<PhaseCounts> counts(phases);
  for (size_t i = 0; i < gt.labels.size(); ++i) {
    if (gt.labels[i] == pred.labels[i]) {
      ++counts[gt.labels[i]].tp;
    } else {
      ++counts[pred.labels[i]].fp;
      ++counts[gt.labels[i]].fn;
    }
  }
  return counts;
}

const char* eval_mode_name(EvalMode mode) {
  return mode == EvalMode::relaxed ? "relaxed" : "unrelaxed";
}

namespace {

// Apply the boundary forgiveness rule: a wrong frame within `window` frames
// of a transition, predicting the phase on the far side of it, counts as
// the ground-truth phase.
std::vector<size_t> relax(const std::vector<size_t>& gt,
                          const std::vector<size_t>& pred, size_t window) {
  size_t n = gt.size();
  std::vector<size_t> adj = pred;
  if (window == 0) return adj;
  for (size_t b = 1; b < n; ++b) {
    if (gt[b] == gt[b - 1]) continue;
    size_t lo = b > window ? b - window : 0;
    for (size_t i = lo; i < b; ++i)           // early switch to the next phase
      if (pred[i] == gt[b]) adj[i] = gt[i];
    size_t hi = std::min(n, b + window);
    for (size_t i = b; i < hi; ++i)           // lingering on the previous phase
      if (pred[i] == gt[b - 1]) adj[i] = gt[i];
  }
  return adj;
}

}  // namespace

MetricReport metrics(const PhaseSequence& gt, const PhaseSequence& pred,
                     EvalMode mode) {
  gt.validate();
  pred.validate();
  if (gt.labels.size() != pred.labels.size())
    fail(ErrorKind::input, "ground truth and prediction lengths differ");

  PhaseSequence adj = pred;
  if (mode == EvalMode::relaxed) {
    size_t window = static_cast<size_t>(std::llround(10.0 * gt.fps));
    adj.labels = relax(gt.labels, pred.labels, window);
  }

  size_t n = gt.labels.size();
  size_t hits = 0;
  for (size_t i = 0; i < n; ++i) hits += gt.labels[i] == adj.labels[i];

  std::vector<PhaseCounts> counts = confusion(gt, adj);
  MetricReport report;
  report.mode = mode;
  report.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  report.per_phase.resize(counts.size());
  size_t present = 0;
  for (size_t p = 0; p < counts.size(); ++p) {
    const PhaseCounts& c = counts[p];
    PhaseMetrics& m = report.per_phase[p];
    m.present = c.tp + c.fp + c.fn > 0;
    if (!m.present) continue;
    ++present;
    m.precision = c.tp + c.fp > 0
                      ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)
                      : 0.0;
    m.recall = c.tp + c.fn > 0
                   ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)
                   : 0.0;
    m.jaccard = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
    m.f1 = m.precision + m.recall > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    report.macro_precision += m.precision;
    report.macro_recall += m.recall;
    report.macro_jaccard += m.jaccard;
    report.macro_f1 += m.f1;
  }
  report.macro_precision /= static_cast<double>(present);
  report.macro_recall /= static_cast<double>(present);
  report.macro_jaccard /= static_cast<double>(present);
  report.macro_f1 /= static_cast<double>(present);
  return report;
}

std::string to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["mode"] = eval_mode_name(report.mode);
  j["accuracy"] = report.accuracy;
  j["macro"] = {{"precision", report.macro_precision},
                {"recall", report.macro_recall},
                {"jaccard", report.macro_jaccard},
                {"f1", report.macro_f1}};
  j["per_phase"] = nlohmann::ordered_json::array();
  for (size_t p = 0; p < report.per_phase.size(); ++p) {
    const PhaseMetrics& m = report.per_phase[p];
    j["per_phase"].push_back({{"phase", p},
                              {"present", m.present},
                              {"precision", m.precision},
                              {"recall", m.recall},
                              {"jaccard", m.jaccard},
                              {"f1", m.f1}});
  }
  return j.dump(2);
}

namespace {

Aggregate aggregate(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(std::max(var, 0.0))};
}

}  // namespace

EvalSummary summarize(const std::vector<MetricReport>& reports) {
  if (reports.empty()) fail(ErrorKind::input, "no reports to summarize");
  auto gather = [&](auto proj) {
    std::vector<double> xs;
    xs.reserve(reports.size());
    for (const MetricReport& r : reports) xs.push_back(proj(r));
    return aggregate(xs);
  };
  EvalSummary s;
  s.videos = reports.size();
  s.accuracy = gather([](const MetricReport& r) { return r.accuracy; });
  s.macro_precision = gather([](const MetricReport& r) { return r.macro_precision; });
  s.macro_recall = gather([](const MetricReport& r) { return r.macro_recall; });
  s.macro_jaccard = gather([](const MetricReport& r) { return r.macro_jaccard; });
  s.macro_f1 = gather([](const MetricReport& r) { return r.macro_f1; });
  return s;
}

std::string to_json(const EvalSummary& summary) {
  auto field = [](const Aggregate& a) {
    return nlohmann::ordered_json{{"mean", a.mean}, {"std", a.stddev}};
  };
  nlohmann::ordered_json j;
  j["videos"] = summary.videos;
  j["accuracy"] = field(summary.accuracy);
  j["macro_precision"] = field(summary.macro_precision);
  j["macro_recall"] = field(summary.macro_recall);
  j["macro_jaccard"] = field(summary.macro_jaccard);
  j["macro_f1"] = field(summary.macro_f1);
  return j.dump(2);
}

void VolumeFrameSource::read_frame(size_t index, double* out) const {
  if (index >= vol_->T) fail(ErrorKind::index, "frame index past the end of the video");
  size_t len = frame_len();
  std::copy_n(vol_->frames.data() + index * len, len, out);
}

FrameVolume read_window(const FrameSource& source, const PatchConfig& cfg,
                        size_t target) {
  FrameVolume vol;
  vol.T = cfg.T;
  vol.C_in = cfg.C_in;
  vol.H = cfg.H;
  vol.W = cfg.W;
  size_t len = source.frame_len();
  if (len != cfg.C_in * cfg.H * cfg.W)
    fail(ErrorKind::input, "frame source geometry does not match the config");
  vol.source_indices = sample_window(source.num_frames(), target, cfg);
  vol.target_index = target;
  vol.frames.resize(cfg.T * len);
  for (size_t j = 0; j < cfg.T; ++j)
    source.read_frame(static_cast<size_t>(vol.source_indices[j]),
                      vol.frames.data() + j * len);
  return vol;
}

VideoEval evaluate_video(ModelParams& params, const ModelConfig& cfg,
                         const FrameSource& source,
                         const PhaseSequence& annotations) {
  annotations.validate();
  cfg.validate();
  size_t n = source.num_frames();
  if (n == 0) fail(ErrorKind::input, "video has no frames");
  if (annotations.labels.size() != n)
    fail(ErrorKind::input, "annotation length does not match the video");
  for (size_t v : annotations.labels)
    if (v >= cfg.num_phases)
      fail(ErrorKind::input, "annotation label outside the configured phase count");

  VideoEval out;
  out.predictions.reserve(n);
  PhaseSequence pred;
  pred.fps = annotations.fps;
  pred.labels.reserve(n);
  for (size_t t = 0; t < n; ++t) {
    FrameVolume vol = read_window(source, cfg.patch, t);
    PhasePrediction p = forward(vol, params, cfg);
    pred.labels.push_back(p.phase);
    out.predictions.push_back(std::move(p));
  }
  out.unrelaxed = metrics(annotations, pred, EvalMode::unrelaxed);
  out.relaxed = metrics(annotations, pred, EvalMode::relaxed);
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

size_t parse_index(const std::string& s, const char* what) {
  // digits only: stoull would silently accept signs and wrap negatives
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    fail(ErrorKind::format, std::string("bad ") + what + " in CSV: '" + s + "'");
  try {
    return static_cast<size_t>(std::stoull(s));
  } catch (const std::exception&) {
    fail(ErrorKind::format, std::string("bad ") + what + " in CSV: '" + s + "'");
  }
}

double parse_double(const std::string& s) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::format, "bad numeric field in CSV: '" + s + "'");
  }
}

}  // namespace

std::vector<size_t> load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open annotation file: " + path);
  std::vector<size_t> labels;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("frame_index", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 2)
      fail(ErrorKind::format, "annotation rows need exactly frame_index,phase_id");
    size_t idx = parse_index(f[0], "frame index");
    if (idx != labels.size())
      fail(ErrorKind::format, "annotation frame indices must count up from 0");
    labels.push_back(parse_index(f[1], "phase id"));
  }
  if (labels.empty()) fail(ErrorKind::format, "annotation file has no rows");
  return labels;
}

void save_annotations(const std::string& path, const std::vector<size_t>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot create annotation file: " + path);
  out << "frame_index,phase_id\n";
  for (size_t i = 0; i < labels.size(); ++i)
    out << i << ',' << labels[i] << '\n';
  if (!out) fail(ErrorKind::io, "short write to annotation file: " + path);
}

void save_predictions_csv(const std::string& path,
                          const std::vector<PhasePrediction>& preds) {
  if (preds.empty()) fail(ErrorKind::input, "no predictions to save");
  size_t classes = preds[0].logits.size();
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot create prediction file: " + path);
  out << "target_index,phase";
  for (size_t c = 0; c < classes; ++c) out << ",logit_" << c;
  out << '\n';
  char buf[64];
  for (const PhasePrediction& p : preds) {
    if (p.logits.size() != classes)
      fail(ErrorKind::input, "predictions have inconsistent class counts");
    out << p.target_index << ',' << p.phase;
    for (double v : p.logits) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) fail(ErrorKind::io, "short write to prediction file: " + path);
}

std::vector<PhasePrediction> load_predictions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open prediction file: " + path);
  std::vector<PhasePrediction> preds;
  std::string line;
  bool first = true;
  size_t classes = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("target_index", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() < 3)
      fail(ErrorKind::format, "prediction rows need target, phase, and logits");
    if (classes == 0) classes = f.size() - 2;
    if (f.size() - 2 != classes)
      fail(ErrorKind::format, "prediction rows have inconsistent logit counts");
    PhasePrediction p;
    p.target_index = parse_index(f[0], "target index");
    p.phase = parse_index(f[1], "phase");
    for (size_t c = 0; c < classes; ++c) p.logits.push_back(parse_double(f[2 + c]));
    if (p.phase >= classes)
      fail(ErrorKind::format, "prediction phase id outside the logit range");
    preds.push_back(std::move(p));
  }
  if (preds.empty()) fail(ErrorKind::format, "prediction file has no rows");
  return preds;
}

}  // namespace phaseformer

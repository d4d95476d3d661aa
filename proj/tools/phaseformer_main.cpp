// Command-line front end: train, predict, evaluate, inspect-attention,
// gen-synthetic. Single static binary; every error leaves one parsable line
// on stderr and a category-specific exit code.

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "phaseformer/error.hpp"
#include "phaseformer/eval.hpp"
#include "phaseformer/model.hpp"
#include "phaseformer/tokenizer.hpp"
#include "phaseformer/trainer.hpp"

namespace {

using namespace phaseformer;
using nlohmann::ordered_json;

// Exit codes: 0 success, 2 config, 3 format, 4 training, 5 io/input,
// 1 anything else.
int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
      return 2;
    case ErrorKind::format:
      return 3;
    case ErrorKind::training:
      return 4;
    case ErrorKind::io:
    case ErrorKind::input:
      return 5;
    default:
      return 1;
  }
}

// One line, fields split on ": " -> ["phaseformer", "error", kind, message].
void print_error_line(const std::string& kind_and_msg) {
  std::string line = kind_and_msg;
  for (char& c : line)
    if (c == '\n' || c == '\r') c = ' ';
  std::fprintf(stderr, "phaseformer: error: %s\n", line.c_str());
}

// ---- strict value parsing (whole string must be consumed) ----

uint64_t parse_u64(const std::string& key, const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    fail(ErrorKind::config, "value for '" + key + "' must be a non-negative integer");
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    fail(ErrorKind::config, "value for '" + key + "' is out of range");
  }
}

double parse_f64(const std::string& key, const std::string& s) {
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size())
      fail(ErrorKind::config, "value for '" + key + "' is not a number");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(ErrorKind::config, "value for '" + key + "' is not a number");
  }
}

std::vector<size_t> parse_lengths(const std::string& key, const std::string& s) {
  std::vector<size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(static_cast<size_t>(parse_u64(key, item)));
  if (out.empty())
    fail(ErrorKind::config, "value for '" + key + "' must list at least one length");
  return out;
}

Aggregation parse_aggregation(const std::string& key, const std::string& s) {
  if (s == "ma") return Aggregation::MA;
  if (s == "tfa") return Aggregation::TFA;
  fail(ErrorKind::config, "value for '" + key + "' must be 'ma' or 'tfa'");
}

// ---- run configuration: flat key=value file plus overrides ----

struct RunConfig {
  ModelConfig model;
  OptimConfig optim;
  SyntheticDatasetSpec data;
  uint64_t init_seed = 0;
  std::string weights_out = "weights.sgfw";
  std::string report_out;  // empty: training curve goes to stdout
};

void apply_key(RunConfig& rc, const std::string& key, const std::string& value) {
  if (key == "model.blocks")
    rc.model.L = parse_u64(key, value);
  else if (key == "model.dim")
    rc.model.D = parse_u64(key, value);
  else if (key == "model.heads")
    rc.model.heads = parse_u64(key, value);
  else if (key == "model.mlp_ratio")
    rc.model.mlp_ratio = parse_u64(key, value);
  else if (key == "model.phases")
    rc.model.num_phases = parse_u64(key, value);
  else if (key == "patch.frames")
    rc.model.patch.T = parse_u64(key, value);
  else if (key == "patch.rate")
    rc.model.patch.R = parse_u64(key, value);
  else if (key == "patch.height")
    rc.model.patch.H = parse_u64(key, value);
  else if (key == "patch.width")
    rc.model.patch.W = parse_u64(key, value);
  else if (key == "patch.channels")
    rc.model.patch.C_in = parse_u64(key, value);
  else if (key == "patch.size")
    rc.model.patch.P = parse_u64(key, value);
  else if (key == "temporal.segments")
    rc.model.hta.segment_lengths = parse_lengths(key, value);
  else if (key == "temporal.alpha")
    rc.model.hta.alpha = parse_f64(key, value);
  else if (key == "temporal.beta")
    rc.model.hta.beta = parse_f64(key, value);
  else if (key == "spatial.aggregation")
    rc.model.asa.aggregation = parse_aggregation(key, value);
  else if (key == "optim.lr")
    rc.optim.lr = parse_f64(key, value);
  else if (key == "optim.beta1")
    rc.optim.beta1 = parse_f64(key, value);
  else if (key == "optim.beta2")
    rc.optim.beta2 = parse_f64(key, value);
  else if (key == "optim.eps")
    rc.optim.eps = parse_f64(key, value);
  else if (key == "optim.weight_decay")
    rc.optim.weight_decay = parse_f64(key, value);
  else if (key == "optim.layer_decay")
    rc.optim.layer_decay = parse_f64(key, value);
  else if (key == "optim.epochs")
    rc.optim.epochs = parse_u64(key, value);
  else if (key == "optim.batch_size")
    rc.optim.batch_size = parse_u64(key, value);
  else if (key == "optim.seed")
    rc.optim.seed = parse_u64(key, value);
  else if (key == "optim.target_accuracy")
    rc.optim.target_accuracy = parse_f64(key, value);
  else if (key == "data.videos")
    rc.data.num_videos = parse_u64(key, value);
  else if (key == "data.frames")
    rc.data.frames_per_video = parse_u64(key, value);
  else if (key == "data.noise")
    rc.data.noise_std = parse_f64(key, value);
  else if (key == "data.seed")
    rc.data.seed = parse_u64(key, value);
  else if (key == "init.seed")
    rc.init_seed = parse_u64(key, value);
  else if (key == "out.weights")
    rc.weights_out = value;
  else if (key == "out.report")
    rc.report_out = value;
  else
    fail(ErrorKind::config, "unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

void apply_pair(RunConfig& rc, const std::string& text, const std::string& where) {
  size_t eq = text.find('=');
  if (eq == std::string::npos)
    fail(ErrorKind::config, where + " is not of the form key=value");
  apply_key(rc, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config file: " + path);
  RunConfig rc;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    apply_pair(rc, line, path + " line " + std::to_string(lineno));
  }
  return rc;
}

void finalize_run_config(RunConfig& rc) {
  rc.model.finalize();
  rc.model.validate();
  rc.optim.validate();
  rc.data.num_phases = rc.model.num_phases;
  rc.data.validate();
  if (rc.weights_out.empty())
    fail(ErrorKind::config, "out.weights must name a destination file");
}

// ---- shared inference helpers ----

// One causal window per frame of the stored video, forwarded in parallel.
// Identical results for any thread count: every window is independent and
// each worker writes only its own slot.
std::vector<PhasePrediction> predict_video(const FrameVolume& video,
                                           ModelParams& params,
                                           const ModelConfig& cfg,
                                           size_t threads) {
  VolumeFrameSource source(video);
  size_t n = source.num_frames();
  if (source.frame_len() != cfg.patch.C_in * cfg.patch.H * cfg.patch.W)
    fail(ErrorKind::input, "video frame geometry does not match the model");
  std::vector<PhasePrediction> preds(n);
  auto run_one = [&](size_t t) {
    preds[t] = forward(read_window(source, cfg.patch, t), params, cfg);
  };
  size_t workers = std::min(threads, n);
  if (workers <= 1) {
    for (size_t t = 0; t < n; ++t) run_one(t);
    return preds;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      try {
        for (size_t t = next.fetch_add(1); t < n; t = next.fetch_add(1))
          run_one(t);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
  return preds;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot create file: " + path);
  out << text;
  if (!out) fail(ErrorKind::io, "short write: " + path);
}

// ---- subcommand bodies ----

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  double lr = 0.0;
  bool have_lr = false;
  uint64_t epochs = 0;
  bool have_epochs = false;
  std::string weights_out, report_out;
};

void cmd_train(const TrainArgs& args) {
  RunConfig rc = load_run_config(args.config_path);
  for (const std::string& kv : args.overrides) apply_pair(rc, kv, "--set '" + kv + "'");
  if (args.have_lr) rc.optim.lr = args.lr;
  if (args.have_epochs) rc.optim.epochs = args.epochs;
  if (!args.weights_out.empty()) rc.weights_out = args.weights_out;
  if (!args.report_out.empty()) rc.report_out = args.report_out;
  finalize_run_config(rc);

  std::vector<LabeledWindow> windows = generate_synthetic(rc.data, rc.model.patch);
  Rng rng(rc.init_seed);
  ModelParams params = init_params(rc.model, rng);
  TrainReport report = train(params, rc.model, windows, rc.optim);
  save_params(rc.weights_out, params, rc.model);

  std::string curve = to_json_lines(report);
  if (rc.report_out.empty()) {
    std::fputs(curve.c_str(), stdout);
  } else {
    write_text(rc.report_out, curve);
    std::fprintf(stdout, "wrote %s\n", rc.report_out.c_str());
  }
  const EpochStats& last = report.epochs.back();
  std::fprintf(stdout, "wrote %s (%zu windows, %zu epochs, accuracy %.4f)\n",
               rc.weights_out.c_str(), windows.size(), report.epochs.size(),
               last.accuracy);
}

struct PredictArgs {
  std::string weights;
  std::vector<std::string> inputs;
  std::string out, out_dir;
  uint64_t window = 0;
  bool have_window = false;
  size_t threads = 1;
};

void cmd_predict(const PredictArgs& args) {
  if (args.out.empty() && args.out_dir.empty())
    fail(ErrorKind::config, "pass --out or --out-dir");
  if (args.inputs.size() > 1 && !args.out.empty())
    fail(ErrorKind::config, "--out takes exactly one --input; use --out-dir");
  auto [cfg, params] = load_params(args.weights);
  if (args.have_window) adapt_to_window(params, cfg, args.window);

  for (const std::string& input : args.inputs) {
    FrameVolume video = load_frame_volume(input);
    std::vector<PhasePrediction> preds =
        predict_video(video, params, cfg, args.threads);
    std::string dest = args.out;
    if (dest.empty()) {
      std::filesystem::path p(input);
      dest = (std::filesystem::path(args.out_dir) /
              (p.stem().string() + "_predictions.csv"))
                 .string();
    }
    save_predictions_csv(dest, preds);
    std::fprintf(stdout, "wrote %s (%zu frames)\n", dest.c_str(), preds.size());
  }
}

struct EvaluateArgs {
  std::vector<std::string> pred_files;
  std::string weights;
  std::vector<std::string> videos;
  std::vector<std::string> ann_files;
  double fps = 1.0;
  std::string out;
  size_t threads = 1;
};

void cmd_evaluate(const EvaluateArgs& args) {
  bool from_preds = !args.pred_files.empty();
  bool from_videos = !args.videos.empty();
  if (from_preds == from_videos)
    fail(ErrorKind::config, "pass either --predictions or --weights with --video");
  if (from_videos && args.weights.empty())
    fail(ErrorKind::config, "--video evaluation needs --weights");
  if (from_preds && !args.weights.empty())
    fail(ErrorKind::config, "--weights only applies to --video evaluation");
  size_t n_inputs = from_preds ? args.pred_files.size() : args.videos.size();
  if (args.ann_files.size() != n_inputs)
    fail(ErrorKind::config, "need exactly one --annotations per input");
  if (!(args.fps > 0.0)) fail(ErrorKind::config, "--fps must be positive");

  ModelConfig cfg;
  ModelParams params;
  if (from_videos) std::tie(cfg, params) = load_params(args.weights);

  ordered_json video_reports = ordered_json::array();
  std::vector<MetricReport> all_unrelaxed, all_relaxed;
  for (size_t i = 0; i < n_inputs; ++i) {
    PhaseSequence gt{load_annotations(args.ann_files[i]), args.fps};
    std::string input;
    std::vector<size_t> labels(gt.labels.size());
    if (from_preds) {
      input = args.pred_files[i];
      std::vector<PhasePrediction> rows = load_predictions_csv(input);
      if (rows.size() != gt.labels.size())
        fail(ErrorKind::input,
             "predictions and annotations disagree on frame count: " + input);
      std::vector<char> seen(rows.size(), 0);
      for (const PhasePrediction& r : rows) {
        if (r.target_index >= rows.size() || seen[r.target_index])
          fail(ErrorKind::input,
               "predictions must cover every frame exactly once: " + input);
        seen[r.target_index] = 1;
        labels[r.target_index] = r.phase;
      }
    } else {
      input = args.videos[i];
      for (size_t label : gt.labels)
        if (label >= cfg.num_phases)
          fail(ErrorKind::input, "annotation label outside the model's phases: " +
                                     args.ann_files[i]);
      FrameVolume video = load_frame_volume(input);
      if (video.T != gt.labels.size())
        fail(ErrorKind::input,
             "annotations and video disagree on frame count: " + input);
      std::vector<PhasePrediction> preds =
          predict_video(video, params, cfg, args.threads);
      for (size_t t = 0; t < preds.size(); ++t) labels[t] = preds[t].phase;
    }
    PhaseSequence pred{labels, args.fps};
    MetricReport un = metrics(gt, pred, EvalMode::unrelaxed);
    MetricReport rel = metrics(gt, pred, EvalMode::relaxed);
    all_unrelaxed.push_back(un);
    all_relaxed.push_back(rel);
    ordered_json entry;
    entry["input"] = input;
    entry["frames"] = gt.labels.size();
    entry["unrelaxed"] = ordered_json::parse(to_json(un));
    entry["relaxed"] = ordered_json::parse(to_json(rel));
    video_reports.push_back(std::move(entry));
  }

  ordered_json report;
  report["videos"] = std::move(video_reports);
  report["summary"]["unrelaxed"] = ordered_json::parse(to_json(summarize(all_unrelaxed)));
  report["summary"]["relaxed"] = ordered_json::parse(to_json(summarize(all_relaxed)));
  std::string text = report.dump(2) + "\n";
  if (args.out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    write_text(args.out, text);
    std::fprintf(stdout, "wrote %s (%zu videos)\n", args.out.c_str(), n_inputs);
  }
}

struct InspectArgs {
  std::string weights, input, out;
  uint64_t layer = 0;
  uint64_t position = 0;
};

void cmd_inspect_attention(const InspectArgs& args) {
  auto [cfg, params] = load_params(args.weights);
  FrameVolume vol = load_frame_volume(args.input);
  if (vol.T != cfg.patch.T) adapt_to_window(params, cfg, vol.T);
  if (args.layer >= cfg.L)
    fail(ErrorKind::argument, "--layer past the last block");
  if (args.position >= cfg.patch.K())
    fail(ErrorKind::argument, "--position past the spatial grid");

  AttentionProbe probe;
  PhasePrediction pred = forward(vol, params, cfg, &probe);
  std::vector<SegmentSpec> specs = suffix_segments(cfg.hta, cfg.patch.T);

  ordered_json segments = ordered_json::array();
  for (const AttentionRecord& rec : probe.records) {
    if (rec.layer != args.layer || rec.spatial_position != args.position)
      continue;
    ordered_json matrix = ordered_json::array();
    for (size_t r = 0; r < rec.matrix.rows(); ++r) {
      ordered_json row = ordered_json::array();
      for (size_t c = 0; c < rec.matrix.cols(); ++c)
        row.push_back(rec.matrix.at(r, c));
      matrix.push_back(std::move(row));
    }
    ordered_json entry;
    entry["segment"] = rec.segment_index;
    entry["first_frame"] = specs[rec.segment_index].start;
    entry["frames"] = rec.matrix.rows();
    entry["head"] = rec.head;
    entry["matrix"] = std::move(matrix);
    segments.push_back(std::move(entry));
  }

  ordered_json out;
  out["layer"] = args.layer;
  out["spatial_position"] = args.position;
  out["window_frames"] = cfg.patch.T;
  out["predicted_phase"] = pred.phase;
  out["segments"] = std::move(segments);
  std::string text = out.dump(2) + "\n";
  if (args.out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    write_text(args.out, text);
    std::fprintf(stdout, "wrote %s\n", args.out.c_str());
  }
}

struct GenArgs {
  std::string out_dir;
  std::string prefix = "video";
  uint64_t videos = 2;
  uint64_t frames = 100;
  uint64_t phases = 7;
  double noise = 0.05;
  uint64_t seed = 0;
  uint64_t height = 16, width = 16, channels = 1;
};

void cmd_gen_synthetic(const GenArgs& args) {
  SyntheticDatasetSpec spec;
  spec.num_videos = args.videos;
  spec.frames_per_video = args.frames;
  spec.num_phases = args.phases;
  spec.noise_std = args.noise;
  spec.seed = args.seed;
  PatchConfig pc;
  pc.T = 1;
  pc.R = 1;
  pc.P = 1;
  pc.H = args.height;
  pc.W = args.width;
  pc.C_in = args.channels;
  spec.validate();
  pc.validate();

  std::error_code ec;
  std::filesystem::create_directories(args.out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory: " + args.out_dir);

  std::vector<SyntheticVideo> videos = generate_videos(spec, pc);
  for (size_t i = 0; i < videos.size(); ++i) {
    std::filesystem::path base(args.out_dir);
    std::string stem = args.prefix + std::to_string(i);
    std::string vol_path = (base / (stem + ".fvol")).string();
    std::string ann_path = (base / (stem + "_annotations.csv")).string();
    save_frame_volume(vol_path, video_to_volume(videos[i], pc));
    save_annotations(ann_path, videos[i].phase_of);
    std::fprintf(stdout, "wrote %s and %s (%zu frames)\n", vol_path.c_str(),
                 ann_path.c_str(), videos[i].phase_of.size());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phaseformer: windowed video transformer for phase recognition"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* t = app.add_subcommand(
      "train", "train a phase classifier on synthetic videos and save weights");
  t->add_option("--config", train_args.config_path,
                "key=value run configuration file")
      ->required();
  t->add_option("--set", train_args.overrides,
                "override one config key (key=value, repeatable)");
  CLI::Option* lr_opt =
      t->add_option("--lr", train_args.lr, "override optim.lr");
  CLI::Option* ep_opt =
      t->add_option("--epochs", train_args.epochs, "override optim.epochs");
  t->add_option("--weights-out", train_args.weights_out, "override out.weights");
  t->add_option("--report-out", train_args.report_out, "override out.report");

  PredictArgs predict_args;
  CLI::App* p = app.add_subcommand(
      "predict", "one causal phase prediction per frame of a stored video");
  p->add_option("--weights", predict_args.weights, "trained weight file")
      ->required();
  p->add_option("--input", predict_args.inputs,
                "video volume file (repeatable)")
      ->required();
  p->add_option("--out", predict_args.out, "prediction CSV (single input)");
  p->add_option("--out-dir", predict_args.out_dir,
                "directory for <input>_predictions.csv files");
  CLI::Option* win_opt = p->add_option(
      "--window", predict_args.window,
      "adapt the model to this window length before predicting");
  p->add_option("--threads", predict_args.threads,
                "worker threads for per-window inference")
      ->check(CLI::Range(size_t{1}, size_t{256}));

  EvaluateArgs eval_args;
  CLI::App* e = app.add_subcommand(
      "evaluate", "score per-frame predictions against annotations");
  e->add_option("--predictions", eval_args.pred_files,
                "prediction CSV (repeatable)");
  e->add_option("--weights", eval_args.weights,
                "weight file, for direct --video evaluation");
  e->add_option("--video", eval_args.videos,
                "video volume to predict and score (repeatable)");
  e->add_option("--annotations", eval_args.ann_files,
                "annotation CSV, one per input")
      ->required();
  e->add_option("--fps", eval_args.fps,
                "frames per second of the annotations (sets the 10 s "
                "boundary-relaxation window)");
  e->add_option("--out", eval_args.out, "report JSON path (default stdout)");
  e->add_option("--threads", eval_args.threads,
                "worker threads for per-window inference")
      ->check(CLI::Range(size_t{1}, size_t{256}));

  InspectArgs inspect_args;
  CLI::App* ia = app.add_subcommand(
      "inspect-attention",
      "dump the temporal attention matrices of one window as JSON");
  ia->add_option("--weights", inspect_args.weights, "trained weight file")
      ->required();
  ia->add_option("--input", inspect_args.input, "window volume file")
      ->required();
  ia->add_option("--layer", inspect_args.layer, "block index")->required();
  ia->add_option("--position", inspect_args.position, "spatial patch index")
      ->required();
  ia->add_option("--out", inspect_args.out, "JSON path (default stdout)");

  GenArgs gen_args;
  CLI::App* g = app.add_subcommand(
      "gen-synthetic", "write synthetic phase videos plus annotation CSVs");
  g->add_option("--out-dir", gen_args.out_dir, "destination directory")
      ->required();
  g->add_option("--prefix", gen_args.prefix, "output file stem prefix");
  g->add_option("--videos", gen_args.videos, "number of videos");
  g->add_option("--frames", gen_args.frames, "frames per video");
  g->add_option("--phases", gen_args.phases, "number of phases");
  g->add_option("--noise", gen_args.noise, "per-pixel gaussian noise stddev");
  g->add_option("--seed", gen_args.seed, "generation seed");
  g->add_option("--height", gen_args.height, "frame height");
  g->add_option("--width", gen_args.width, "frame width");
  g->add_option("--channels", gen_args.channels, "frame channels");

  try {
    app.parse(argc, argv);
    train_args.have_lr = lr_opt->count() > 0;
    train_args.have_epochs = ep_opt->count() > 0;
    predict_args.have_window = win_opt->count() > 0;
    if (t->parsed()) cmd_train(train_args);
    if (p->parsed()) cmd_predict(predict_args);
    if (e->parsed()) cmd_evaluate(eval_args);
    if (ia->parsed()) cmd_inspect_attention(inspect_args);
    if (g->parsed()) cmd_gen_synthetic(gen_args);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);
    print_error_line(std::string("usage: ") + err.what());
    return 2;
  } catch (const Error& err) {
    print_error_line(err.what());  // what() already starts with the kind
    return exit_code_for(err.kind());
  } catch (const std::exception& err) {
    print_error_line(std::string("internal: ") + err.what());
    return 1;
  }
  return 0;
}

#include "phaseformer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "phaseformer/error.hpp"

namespace phaseformer {

void OptimConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorKind::config, "lr must be finite and non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail(ErrorKind::config, "beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail(ErrorKind::config, "beta2 must be in [0, 1)");
  if (!(eps > 0.0)) fail(ErrorKind::config, "eps must be positive");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::config, "weight_decay must be non-negative");
  if (!(layer_decay > 0.0 && layer_decay <= 1.0))
    fail(ErrorKind::config, "layer_decay must be in (0, 1]");
  if (epochs == 0) fail(ErrorKind::config, "epochs must be positive");
  if (batch_size == 0) fail(ErrorKind::config, "batch_size must be positive");
}

std::vector<ParamRef> model_param_refs(ModelParams& params, const ModelConfig& cfg) {
  std::vector<ParamRef> refs;
  visit_params(params, cfg, [&](const std::string& name, Tensor& t, size_t depth) {
    refs.push_back({name, &t, depth});
  });
  return refs;
}

OptimState make_optim_state(const std::vector<ParamRef>& params) {
  OptimState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const ParamRef& p : params) {
    st.m.emplace_back(p.tensor->size(), 0.0);
    st.v.emplace_back(p.tensor->size(), 0.0);
  }
  return st;
}

void adamw_step(const std::vector<ParamRef>& params,
                const std::vector<std::vector<double>>& grads,
                OptimState& state, const OptimConfig& cfg) {
  cfg.validate();
  if (grads.size() != params.size())
    fail(ErrorKind::argument, "one gradient buffer per parameter required");
  if (state.m.size() != params.size() || state.v.size() != params.size())
    fail(ErrorKind::argument, "optimizer state does not match the parameter list");
  size_t max_depth = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].tensor->size())
      fail(ErrorKind::dimension, "gradient length mismatch for " + params[i].name);
    for (double g : grads[i])
      if (!std::isfinite(g))
        fail(ErrorKind::training, "non-finite gradient for " + params[i].name);
    max_depth = std::max(max_depth, params[i].depth);
  }

  ++state.step;
  double t = static_cast<double>(state.step);
  double bc1 = 1.0 - std::pow(cfg.beta1, t);
  double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    double lr_i =
        cfg.lr * std::pow(cfg.layer_decay,
                          static_cast<double>(max_depth - params[i].depth));
    std::vector<double>& x = params[i].tensor->data;
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    const std::vector<double>& g = grads[i];
    for (size_t j = 0; j < x.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      double mh = m[j] / bc1;
      double vh = v[j] / bc2;
      x[j] -= lr_i * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * x[j]);
    }
  }
}

void SyntheticDatasetSpec::validate() const {
  if (num_videos == 0) fail(ErrorKind::config, "need at least one video");
  if (num_phases < 2) fail(ErrorKind::config, "need at least two phases");
  if (frames_per_video < num_phases)
    fail(ErrorKind::config, "too few frames for every phase to appear");
  if (!(noise_std >= 0.0)) fail(ErrorKind::config, "noise_std must be non-negative");
}

std::vector<SyntheticVideo> generate_videos(const SyntheticDatasetSpec& spec,
                                            const PatchConfig& pc) {
  spec.validate();
  pc.validate();
  Rng rng(spec.seed);
  size_t n = spec.frames_per_video, phases = spec.num_phases;
  size_t frame_len = pc.C_in * pc.H * pc.W;
  double gap = 1.6 / static_cast<double>(phases - 1);
  double amp = 0.2 * gap;  // below gap/2, so phase means never collide

  std::vector<SyntheticVideo> videos(spec.num_videos);
  for (SyntheticVideo& video : videos) {
    // contiguous spans: jitter the equal-split boundaries, every span >= 1
    std::vector<size_t> bounds(phases + 1);
    bounds[phases] = n;
    size_t jitter = std::max<size_t>(1, n / phases / 4);
    for (size_t p = 1; p < phases; ++p) {
      size_t nominal = p * n / phases;
      size_t lo = std::max(bounds[p - 1] + 1, nominal > jitter ? nominal - jitter : 1);
      size_t hi = std::min(nominal + jitter, n - (phases - p));
      if (hi < lo) hi = lo;
      bounds[p] = lo + rng.uniform_int(hi - lo + 1);
    }

    video.phase_of.resize(n);
    for (size_t p = 0; p < phases; ++p)
      for (size_t f = bounds[p]; f < bounds[p + 1]; ++f) video.phase_of[f] = p;

    video.frames.resize(n * frame_len);
    for (size_t f = 0; f < n; ++f) {
      size_t p = video.phase_of[f];
      double mu = -0.8 + gap * static_cast<double>(p);
      double* row = video.frames.data() + f * frame_len;
      size_t i = 0;
      for (size_t c = 0; c < pc.C_in; ++c)
        for (size_t y = 0; y < pc.H; ++y)
          for (size_t x = 0; x < pc.W; ++x, ++i) {
            double s = static_cast<double>((y + 2 * x + 3 * p + c) % 3) - 1.0;
            row[i] = mu + amp * s;
            if (spec.noise_std > 0.0) row[i] += spec.noise_std * rng.gauss();
          }
    }
  }
  return videos;
}

std::vector<LabeledWindow> windows_from_video(const SyntheticVideo& video,
                                              const PatchConfig& pc) {
  size_t frame_len = pc.C_in * pc.H * pc.W;
  size_t n = video.phase_of.size();
  if (n == 0 || video.frames.size() != n * frame_len)
    fail(ErrorKind::input, "video buffer does not match the frame geometry");
  std::vector<LabeledWindow> out;
  out.reserve(n);
  for (size_t target = 0; target < n; ++target) {
    LabeledWindow w;
    w.volume.T = pc.T;
    w.volume.C_in = pc.C_in;
    w.volume.H = pc.H;
    w.volume.W = pc.W;
    w.volume.source_indices = sample_window(n, target, pc);
    w.volume.target_index = target;
    w.volume.frames.resize(pc.T * frame_len);
    for (size_t j = 0; j < pc.T; ++j) {
      size_t src = static_cast<size_t>(w.volume.source_indices[j]);
      std::copy_n(video.frames.data() + src * frame_len, frame_len,
                  w.volume.frames.data() + j * frame_len);
    }
    w.label = video.phase_of[target];
    out.push_back(std::move(w));
  }
  return out;
}

FrameVolume video_to_volume(const SyntheticVideo& video, const PatchConfig& pc) {
  size_t n = video.phase_of.size();
  size_t frame_len = pc.C_in * pc.H * pc.W;
  if (n == 0 || video.frames.size() != n * frame_len)
    fail(ErrorKind::input, "video buffer does not match the frame geometry");
  FrameVolume vol;
  vol.T = n;
  vol.C_in = pc.C_in;
  vol.H = pc.H;
  vol.W = pc.W;
  vol.frames = video.frames;
  vol.source_indices.resize(n);
  std::iota(vol.source_indices.begin(), vol.source_indices.end(), uint64_t{0});
  vol.target_index = n - 1;
  return vol;
}

std::vector<LabeledWindow> generate_synthetic(const SyntheticDatasetSpec& spec,
                                              const PatchConfig& pc) {
  std::vector<LabeledWindow> all;
  for (const SyntheticVideo& video : generate_videos(spec, pc)) {
    std::vector<LabeledWindow> w = windows_from_video(video, pc);
    all.insert(all.end(), std::make_move_iterator(w.begin()),
               std::make_move_iterator(w.end()));
  }
  return all;
}

std::string to_json_lines(const TrainReport& report) {
  std::string out;
  for (const EpochStats& e : report.epochs) {
    nlohmann::ordered_json line;
    line["epoch"] = e.epoch;
    line["loss"] = e.loss;
    line["accuracy"] = e.accuracy;
    out += line.dump();
    out += '\n';
  }
  return out;
}

TrainReport train(ModelParams& params, const ModelConfig& cfg,
                  const std::vector<LabeledWindow>& data,
                  const OptimConfig& opt) {
  opt.validate();
  cfg.validate();
  if (data.empty()) fail(ErrorKind::input, "training data is empty");
  for (const LabeledWindow& w : data)
    if (w.label >= cfg.num_phases)
      fail(ErrorKind::input, "label outside the configured phase count");

  size_t n = data.size(), T = cfg.patch.T, K = cfg.patch.K();
  std::vector<Tensor> patches;
  patches.reserve(n);
  for (const LabeledWindow& w : data) patches.push_back(patchify(w.volume, cfg.patch));

  std::vector<ParamRef> refs = model_param_refs(params, cfg);
  OptimState state = make_optim_state(refs);
  Rng rng(opt.seed);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});

  std::vector<std::vector<double>> acc(refs.size());
  std::vector<double> sample_loss(n, 0.0);

  TrainReport report;
  for (size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    rng.shuffle(order);
    size_t correct = 0;
    for (size_t start = 0; start < n; start += opt.batch_size) {
      size_t stop = std::min(n, start + opt.batch_size);
      for (size_t i = 0; i < refs.size(); ++i)
        acc[i].assign(refs[i].tensor->size(), 0.0);

      for (size_t b = start; b < stop; ++b) {
        size_t s = order[b];
        Tape tape;
        BoundModel bound = bind_model(tape, params, cfg, /*requires_grad=*/true);
        Var logits =
            model_logits_nodes(tape, tape.constant(patches[s]), bound, cfg, T, K);
        Var loss = tape.cross_entropy(logits, data[s].label);
        double lv = tape.value(loss)[0];
        if (!std::isfinite(lv)) fail(ErrorKind::training, "loss diverged");
        sample_loss[s] = lv;

        const Tensor& lt = tape.value(logits);
        size_t pick = 0;
        for (size_t c = 1; c < lt.size(); ++c)
          if (lt[c] > lt[pick]) pick = c;
        correct += pick == data[s].label;

        tape.backward(loss);
        for (size_t i = 0; i < refs.size(); ++i) {
          const std::vector<double>& g = tape.grad(bound.flat[i]);
          for (size_t j = 0; j < g.size(); ++j) acc[i][j] += g[j];
        }
      }

      double inv = 1.0 / static_cast<double>(stop - start);
      for (std::vector<double>& a : acc)
        for (double& gj : a) gj *= inv;
      adamw_step(refs, acc, state, opt);
    }

    // sum in sample order so the epoch loss is independent of the shuffle
    double total = 0.0;
    for (double l : sample_loss) total += l;
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = total / static_cast<double>(n);
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    report.epochs.push_back(stats);
    if (stats.accuracy >= opt.target_accuracy) break;
  }
  return report;
}

}  // namespace phaseformer

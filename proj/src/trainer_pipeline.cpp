#include "mfqe/trainer_pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <thread>

#include "mfqe/errors.hpp"

namespace mfqe {

namespace {

bool starts_with(const std::string& s, const char* p) { return s.rfind(p, 0) == 0; }

nn::Tensor<float> crop(const LumaFrame& f, int x0, int y0, int size) {
  nn::Tensor<float> t(1, 1, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) t.at(0, 0, y, x) = f.at(x0 + x, y0 + y) / 255.0f;
  return t;
}

std::uint64_t clip_seed(std::uint64_t seed, std::size_t clip) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(clip)};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

void check_alignment(std::span<const ClipPair> pairs, std::span<const DetectionResult> detections,
                     const char* op) {
  if (pairs.size() != detections.size())
    throw ArgumentError(std::string("trainer_pipeline.") + op + ": " + std::to_string(pairs.size()) + " clips but " +
                        std::to_string(detections.size()) + " detection results");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pairs[i].validate();
    if (detections[i].labels.size() != pairs[i].compressed.size())
      throw ArgumentError(std::string("trainer_pipeline.") + op + ": detection labels of clip " + std::to_string(i) +
                          " do not match its frame count");
  }
}

// Edge-replicating pad to multiples of 4 on the bottom/right.
nn::Tensor<float> padded_tensor(const LumaFrame& f) {
  const int h = (f.height() + 3) / 4 * 4;
  const int w = (f.width() + 3) / 4 * 4;
  nn::Tensor<float> t(1, 1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) t.at(0, 0, y, x) = f.at(std::min(x, f.width() - 1), std::min(y, f.height() - 1)) / 255.0f;
  return t;
}

LumaFrame crop_to_frame(const nn::Tensor<float>& t, int width, int height) {
  LumaFrame f(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (!std::isfinite(t.at(0, 0, y, x)))
        throw NumericalError("trainer_pipeline: non-finite network output at (" + std::to_string(x) + "," +
                             std::to_string(y) + ")");
      const float v = std::clamp(t.at(0, 0, y, x), 0.0f, 1.0f);
      f.at(x, y) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  return f;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Per-sample loss closure used by the shared training loop.
struct SampleLoss {
  nn::Var<float> total;
  double l_mc = 0.0;
  double l_qe = 0.0;
};
using LossFn = std::function<SampleLoss(std::size_t sample, const nn::ParamStore<float>& params, const LossWeights& w)>;

// Sequential over steps; each batch is split across workers with one gradient
// buffer per batch slot, reduced in slot order so results do not depend on the worker count.
TrainReport run_training(std::size_t n, nn::ParamStore<float>& view, const Schedule& schedule, std::uint64_t seed,
                         bool two_phase, const LossFn& loss_fn, const std::function<void(const StepRecord&)>& on_step,
                         const MfcnnModel& model, const char* op) {
  schedule.validate();
  if (n == 0) throw ArgumentError(std::string("trainer_pipeline.") + op + ": no training samples");
  const int batch = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(schedule.batch), n));
  const int workers = std::min(schedule.workers, batch);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  std::vector<nn::ParamStore<float>> local;
  for (int t = 0; t < workers; ++t) local.push_back(view.clone());
  const auto& master = view.params();
  const std::size_t count = view.scalar_count();
  std::vector<std::vector<float>> grads(static_cast<std::size_t>(batch), std::vector<float>(count));
  std::vector<SampleLoss> losses(static_cast<std::size_t>(batch));

  auto state = nn::AdamState<float>::init(view, {schedule.lr});
  TrainReport report;
  int phase = two_phase && schedule.max_phase1_steps > 0 ? 1 : 2;
  if (two_phase && phase == 2) report.phase_switch_step = 0;
  std::vector<double> mc_history;

  for (int step = 0; step < schedule.total_steps; ++step) {
    std::vector<std::size_t> picks(static_cast<std::size_t>(batch));
    for (auto& p : picks) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      p = order[cursor++];
    }
    const LossWeights& w = !two_phase ? schedule.phase2 : (phase == 1 ? schedule.phase1 : schedule.phase2);

    auto work = [&](int t) {
      auto& ps = local[static_cast<std::size_t>(t)];
      const auto& lp = ps.params();
      for (std::size_t k = 0; k < lp.size(); ++k) lp[k]->value.data = master[k]->value.data;
      for (int j = t; j < batch; j += workers) {
        ps.zero_grad();
        auto l = loss_fn(picks[static_cast<std::size_t>(j)], ps, w);
        nn::backward(l.total);
        auto& g = grads[static_cast<std::size_t>(j)];
        std::size_t off = 0;
        for (const auto& p : lp) {
          std::copy(p->grad.data.begin(), p->grad.data.end(), g.begin() + static_cast<std::ptrdiff_t>(off));
          off += p->grad.size();
        }
        losses[static_cast<std::size_t>(j)] = std::move(l);
      }
    };
    if (workers == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
      for (int t = 0; t < workers; ++t)
        pool.emplace_back([&, t] {
          try {
            work(t);
          } catch (...) {
            errors[static_cast<std::size_t>(t)] = std::current_exception();
          }
        });
      for (auto& th : pool) th.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    StepRecord rec;
    rec.step = step;
    rec.phase = two_phase ? phase : 1;
    for (const auto& l : losses) {
      rec.l_mc += l.l_mc;
      rec.l_qe += l.l_qe;
      rec.total += static_cast<double>(l.total->value.data[0]);
    }
    rec.l_mc /= batch;
    rec.l_qe /= batch;
    rec.total /= batch;
    if (!std::isfinite(rec.total) || !std::isfinite(rec.l_mc) || !std::isfinite(rec.l_qe)) {
      std::string where;
      if (schedule.dump_path) {
        to_checkpoint(model).save(*schedule.dump_path);
        where = "; state written to " + schedule.dump_path->string();
      }
      char buf[160];
      std::snprintf(buf, sizeof buf, "non-finite loss at step %d (phase %d, l_mc=%g, l_qe=%g, total=%g)", step,
                    rec.phase, rec.l_mc, rec.l_qe, rec.total);
      throw NumericalError(std::string("trainer_pipeline.") + op + ": " + buf + where);
    }

    const float inv = 1.0f / static_cast<float>(batch);
    std::size_t off = 0;
    for (const auto& p : master) {
      auto& g = p->ensure_grad().data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        float acc = 0.0f;
        for (const auto& buf : grads) acc += buf[off + i];
        g[i] = acc * inv;
      }
      off += g.size();
    }
    nn::adam_step(view, state);

    report.steps.push_back(rec);
    if (on_step) on_step(rec);

    if (two_phase && phase == 1) {
      mc_history.push_back(rec.l_mc);
      const int done = step + 1;
      const int win = schedule.window;
      bool flat = false;
      if (done >= 2 * win) {
        const auto end = mc_history.end();
        const double prev = std::accumulate(end - 2 * win, end - win, 0.0) / win;
        const double cur = std::accumulate(end - win, end, 0.0) / win;
        flat = prev <= 0.0 || (prev - cur) / prev < schedule.min_rel_improvement;
      }
      if (flat || done >= schedule.max_phase1_steps) {
        phase = 2;
        report.phase_switch_step = done;
      }
    }
  }
  return report;
}

}  // namespace

std::pair<int, int> neighbor_pair(std::span<const int> is_pqf, int n, NeighborMode mode) {
  const int count = static_cast<int>(is_pqf.size());
  if (n < 0 || n >= count) throw ArgumentError("trainer_pipeline.neighbor_pair: frame index out of range");
  if (mode == NeighborMode::AdjacentFrames) {
    if (count < 2) throw ArgumentError("trainer_pipeline.neighbor_pair: adjacent mode needs two frames");
    int p1 = n - 1, p2 = n + 1;
    if (p1 < 0) p1 = p2;
    if (p2 >= count) p2 = p1;
    return {p1, p2};
  }
  if (is_pqf[static_cast<std::size_t>(n)])
    throw ArgumentError("trainer_pipeline.neighbor_pair: frame " + std::to_string(n) + " is a PQF");
  int p1 = -1, p2 = -1;
  for (int i = n - 1; i >= 0; --i)
    if (is_pqf[static_cast<std::size_t>(i)]) {
      p1 = i;
      break;
    }
  for (int i = n + 1; i < count; ++i)
    if (is_pqf[static_cast<std::size_t>(i)]) {
      p2 = i;
      break;
    }
  if (p1 < 0 && p2 < 0) throw ArgumentError("trainer_pipeline.neighbor_pair: clip has no PQF");
  if (p1 < 0) p1 = p2;
  if (p2 < 0) p2 = p1;
  return {p1, p2};
}

void SampleConfig::validate() const {
  if (patch < 4 || patch % 4 != 0) throw ArgumentError("trainer_pipeline.SampleConfig: patch must be a positive multiple of 4");
  if (stride < 1) throw ArgumentError("trainer_pipeline.SampleConfig: stride must be >= 1");
  if (jitter < 0) throw ArgumentError("trainer_pipeline.SampleConfig: jitter must be >= 0");
}

std::vector<int> patch_positions(int extent, const SampleConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (extent < cfg.patch)
    throw ArgumentError("trainer_pipeline.patch_positions: frame side " + std::to_string(extent) +
                        " is smaller than the patch size " + std::to_string(cfg.patch));
  std::vector<int> out;
  std::uniform_int_distribution<int> jit(0, cfg.jitter);
  for (int p = 0; p + cfg.patch <= extent; p += cfg.stride) out.push_back(std::min(p + jit(rng), extent - cfg.patch));
  return out;
}

SampleSet<TrainingSample> build_samples(std::span<const ClipPair> pairs, std::span<const DetectionResult> detections,
                                        const SampleConfig& cfg) {
  cfg.validate();
  check_alignment(pairs, detections, "build_samples");
  SampleSet<TrainingSample> out;
  for (std::size_t c = 0; c < pairs.size(); ++c) {
    const auto& labels = detections[c].labels;
    if (std::none_of(labels.begin(), labels.end(), [](int v) { return v != 0; })) {
      ++out.skipped_clips;
      continue;
    }
    const auto& raw = pairs[c].raw;
    const auto& cmp = pairs[c].compressed;
    std::mt19937_64 rng(clip_seed(cfg.seed, c));
    for (int n = 0; n < static_cast<int>(cmp.size()); ++n) {
      if (labels[static_cast<std::size_t>(n)]) continue;
      const auto [p1, p2] = neighbor_pair(labels, n, cfg.mode);
      const auto ys = patch_positions(cmp.height(), cfg, rng);
      const auto xs = patch_positions(cmp.width(), cfg, rng);
      for (int y : ys)
        for (int x : xs) {
          TrainingSample s;
          s.f_np = crop(cmp.frames[static_cast<std::size_t>(n)], x, y, cfg.patch);
          s.f_p1 = crop(cmp.frames[static_cast<std::size_t>(p1)], x, y, cfg.patch);
          s.f_p2 = crop(cmp.frames[static_cast<std::size_t>(p2)], x, y, cfg.patch);
          s.f_r_np = crop(raw.frames[static_cast<std::size_t>(n)], x, y, cfg.patch);
          s.f_r_p1 = crop(raw.frames[static_cast<std::size_t>(p1)], x, y, cfg.patch);
          s.f_r_p2 = crop(raw.frames[static_cast<std::size_t>(p2)], x, y, cfg.patch);
          s.clip = static_cast<int>(c);
          s.np = n;
          s.p1 = p1;
          s.p2 = p2;
          s.x = x;
          s.y = y;
          out.samples.push_back(std::move(s));
        }
    }
  }
  return out;
}

SampleSet<PqfSample> build_pqf_samples(std::span<const ClipPair> pairs, std::span<const DetectionResult> detections,
                                       const SampleConfig& cfg) {
  cfg.validate();
  check_alignment(pairs, detections, "build_pqf_samples");
  SampleSet<PqfSample> out;
  for (std::size_t c = 0; c < pairs.size(); ++c) {
    const auto& labels = detections[c].labels;
    if (std::none_of(labels.begin(), labels.end(), [](int v) { return v != 0; })) {
      ++out.skipped_clips;
      continue;
    }
    std::mt19937_64 rng(clip_seed(cfg.seed ^ 0x5f5f5f5fULL, c));
    for (int n = 0; n < static_cast<int>(labels.size()); ++n) {
      if (!labels[static_cast<std::size_t>(n)]) continue;
      const auto ys = patch_positions(pairs[c].compressed.height(), cfg, rng);
      const auto xs = patch_positions(pairs[c].compressed.width(), cfg, rng);
      for (int y : ys)
        for (int x : xs) {
          PqfSample s;
          s.f = crop(pairs[c].compressed.frames[static_cast<std::size_t>(n)], x, y, cfg.patch);
          s.f_r = crop(pairs[c].raw.frames[static_cast<std::size_t>(n)], x, y, cfg.patch);
          s.clip = static_cast<int>(c);
          s.frame = n;
          s.x = x;
          s.y = y;
          out.samples.push_back(std::move(s));
        }
    }
  }
  return out;
}

void LossWeights::validate() const {
  if (!(a >= 0.0) || !(b >= 0.0) || !(a + b > 0.0))
    throw ArgumentError("trainer_pipeline.LossWeights: weights must be nonnegative with a positive sum");
}

void Schedule::validate() const {
  phase1.validate();
  phase2.validate();
  if (window < 1) throw ArgumentError("trainer_pipeline.Schedule: window must be >= 1");
  if (max_phase1_steps < 0) throw ArgumentError("trainer_pipeline.Schedule: max_phase1_steps must be >= 0");
  if (batch < 1) throw ArgumentError("trainer_pipeline.Schedule: batch must be >= 1");
  if (!(lr > 0.0)) throw ArgumentError("trainer_pipeline.Schedule: lr must be positive");
  if (total_steps < 1) throw ArgumentError("trainer_pipeline.Schedule: total_steps must be >= 1");
  if (workers < 1) throw ArgumentError("trainer_pipeline.Schedule: workers must be >= 1");
  if (!(min_rel_improvement >= 0.0))
    throw ArgumentError("trainer_pipeline.Schedule: min_rel_improvement must be >= 0");
}

MfcnnModel MfcnnModel::init(const McConfig& mc, const QeConfig& qe, std::uint64_t seed) {
  mc.validate();
  qe.validate();
  MfcnnModel m;
  m.mc = mc;
  m.qe = qe;
  std::mt19937_64 rng(seed);
  mc_init(m.params, mc, rng, "mc.");
  qe_init(m.params, qe, rng, "qe.");
  qe_init(m.params, qe, rng, "qe_sf.");
  return m;
}

Checkpoint to_checkpoint(const MfcnnModel& model) {
  Checkpoint c;
  c.put("cfg.mc", {4},
        {static_cast<float>(model.mc.max_displacement), static_cast<float>(model.mc.width),
         static_cast<float>(model.mc.reduction), model.mc.strict_eq6 ? 1.0f : 0.0f});
  c.put("cfg.qe", {3},
        {static_cast<float>(model.qe.reduction), model.qe.clamp_output ? 1.0f : 0.0f,
         static_cast<float>(model.qe.conv9_gain)});
  for (const auto& p : model.params.params()) {
    std::vector<std::uint32_t> dims;
    for (int d : p->value.shape) dims.push_back(static_cast<std::uint32_t>(d));
    c.put(p->name, std::move(dims), p->value.data);
  }
  return c;
}

MfcnnModel model_from_checkpoint(const Checkpoint& ckpt) {
  const auto& cm = ckpt.get("cfg.mc");
  const auto& cq = ckpt.get("cfg.qe");
  if (cm.data.size() != 4 || cq.data.size() != 3)
    throw FormatError("trainer_pipeline.model_from_checkpoint: cfg.mc / cfg.qe must hold 4 and 3 values");
  McConfig mc;
  mc.max_displacement = cm.data[0];
  mc.width = static_cast<int>(cm.data[1]);
  mc.reduction = static_cast<int>(cm.data[2]);
  mc.strict_eq6 = cm.data[3] != 0.0f;
  QeConfig qe;
  qe.reduction = static_cast<int>(cq.data[0]);
  qe.clamp_output = cq.data[1] != 0.0f;
  qe.conv9_gain = cq.data[2];
  MfcnnModel m;
  try {
    m = MfcnnModel::init(mc, qe, 0);
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("trainer_pipeline.model_from_checkpoint: invalid config echo (") + e.what() + ")");
  }
  for (const auto& p : m.params.params()) {
    const auto& e = ckpt.get(p->name);
    std::vector<std::uint32_t> dims;
    for (int d : p->value.shape) dims.push_back(static_cast<std::uint32_t>(d));
    if (e.dims != dims)
      throw FormatError("trainer_pipeline.model_from_checkpoint: shape of '" + p->name +
                        "' does not match the declared config (expected " + nn::shape_string(p->value.shape) + ")");
    p->value.data = e.data;
  }
  return m;
}

void TrainReport::write_csv(std::ostream& out) const {
  out << "step,l_mc,l_qe,total,phase\n";
  char buf[160];
  for (const auto& r : steps) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%d\n", r.step, r.l_mc, r.l_qe, r.total, r.phase);
    out << buf;
  }
}

template <class T>
SampleGraph<T> sample_graph(const TrainingSample& s, const nn::ParamStore<T>& params, const McConfig& mc,
                            const QeConfig& qe, const LossWeights& w) {
  auto c = [](const nn::Tensor<float>& t) { return nn::constant(t.template cast<T>()); };
  auto np = c(s.f_np);
  auto p1 = c(s.f_p1);
  auto p2 = c(s.f_p2);
  auto r_np = c(s.f_r_np);
  const auto o1 = mc_forward(np, p1, params, mc);
  const auto o2 = mc_forward(np, p2, params, mc);
  SampleGraph<T> g;
  g.l_mc = nn::add(mc_supervised_loss(o1, r_np, c(s.f_r_p1), mc), mc_supervised_loss(o2, r_np, c(s.f_r_p2), mc));
  g.enhanced = qe_forward(o1.warped_pqf, np, o2.warped_pqf, params, qe).enhanced;
  g.l_qe = nn::mse(g.enhanced, r_np);
  g.total = nn::add(nn::scale(g.l_mc, static_cast<T>(w.a)), nn::scale(g.l_qe, static_cast<T>(w.b)));
  return g;
}

template SampleGraph<float> sample_graph<float>(const TrainingSample&, const nn::ParamStore<float>&, const McConfig&,
                                                const QeConfig&, const LossWeights&);
template SampleGraph<double> sample_graph<double>(const TrainingSample&, const nn::ParamStore<double>&,
                                                  const McConfig&, const QeConfig&, const LossWeights&);

Losses evaluate_losses(const MfcnnModel& model, std::span<const TrainingSample> samples, const LossWeights& w) {
  nn::NoGradGuard ng;
  Losses out;
  for (const auto& s : samples) {
    const auto g = sample_graph(s, model.params, model.mc, model.qe, w);
    out.l_mc += g.l_mc->value.data[0];
    out.l_qe += g.l_qe->value.data[0];
    out.total += g.total->value.data[0];
  }
  if (!samples.empty()) {
    const double n = static_cast<double>(samples.size());
    out.l_mc /= n;
    out.l_qe /= n;
    out.total /= n;
  }
  return out;
}

TrainReport train_mfcnn(std::span<const TrainingSample> samples, const Schedule& schedule, MfcnnModel& model,
                        std::uint64_t seed, const std::function<void(const StepRecord&)>& on_step) {
  auto view = model.params.subset([](const std::string& n) { return starts_with(n, "mc.") || starts_with(n, "qe."); });
  const LossFn fn = [&](std::size_t i, const nn::ParamStore<float>& ps, const LossWeights& w) {
    const auto g = sample_graph(samples[i], ps, model.mc, model.qe, w);
    return SampleLoss{g.total, g.l_mc->value.data[0], g.l_qe->value.data[0]};
  };
  return run_training(samples.size(), view, schedule, seed, true, fn, on_step, model, "train_mfcnn");
}

TrainReport train_single_frame(std::span<const PqfSample> samples, const Schedule& schedule, MfcnnModel& model,
                               std::uint64_t seed, const std::function<void(const StepRecord&)>& on_step) {
  auto view = model.params.subset([](const std::string& n) { return starts_with(n, "qe_sf."); });
  const LossFn fn = [&](std::size_t i, const nn::ParamStore<float>& ps, const LossWeights&) {
    const auto& s = samples[i];
    auto l = nn::mse(qe_single_frame(nn::constant(s.f), ps, model.qe).enhanced, nn::constant(s.f_r));
    return SampleLoss{l, 0.0, l->value.data[0]};
  };
  return run_training(samples.size(), view, schedule, seed, false, fn, on_step, model, "train_single_frame");
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::PqfEnhanced: return "pqf_enhanced";
    case Provenance::NonPqfEnhanced: return "nonpqf_enhanced";
    case Provenance::FallbackSingleFrame: return "fallback_single_frame";
  }
  return "unknown";
}

EnhanceResult enhance_clip(const VideoClip& compressed, const MfcnnModel& model, const svm::Model& detector,
                           const EnhanceConfig& cfg) {
  return enhance_clip(compressed, model, detect(compressed, detector, cfg.detector), cfg);
}

EnhanceResult enhance_clip(const VideoClip& compressed, const MfcnnModel& model, const DetectionResult& detection,
                           const EnhanceConfig& cfg) {
  compressed.validate();
  if (compressed.size() < 3) throw ArgumentError("trainer_pipeline.enhance_clip: clip needs at least 3 frames");
  if (detection.labels.size() != compressed.size())
    throw ArgumentError("trainer_pipeline.enhance_clip: detection labels do not match the frame count");
  if (cfg.workers < 1) throw ArgumentError("trainer_pipeline.enhance_clip: workers must be >= 1");

  const std::size_t n = compressed.size();
  const auto& labels = detection.labels;
  const bool any_pqf = std::any_of(labels.begin(), labels.end(), [](int v) { return v != 0; });

  EnhanceResult res;
  res.detection = detection;
  res.clip = compressed;
  res.provenance.resize(n);
  if (!any_pqf) res.warning = "no PQF detected; every frame enhanced by the single-frame network";

  std::vector<nn::Tensor<float>> in(n);
  for (std::size_t i = 0; i < n; ++i) in[i] = padded_tensor(compressed.frames[i]);

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    nn::NoGradGuard ng;
    for (std::size_t i = next++; i < n; i = next++) {
      auto f = nn::constant(in[i]);
      nn::Var<float> out;
      if (!any_pqf || labels[i]) {
        out = qe_single_frame(f, model.params, model.qe).enhanced;
        res.provenance[i] = any_pqf ? Provenance::PqfEnhanced : Provenance::FallbackSingleFrame;
      } else {
        const auto [p1, p2] = neighbor_pair(labels, static_cast<int>(i), cfg.mode);
        const auto w1 = mc_forward(f, nn::constant(in[static_cast<std::size_t>(p1)]), model.params, model.mc);
        const auto w2 = mc_forward(f, nn::constant(in[static_cast<std::size_t>(p2)]), model.params, model.mc);
        out = qe_forward(w1.warped_pqf, f, w2.warped_pqf, model.params, model.qe).enhanced;
        res.provenance[i] = Provenance::NonPqfEnhanced;
      }
      res.clip.frames[i] = crop_to_frame(out->value, compressed.width(), compressed.height());
    }
  };
  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), n));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        try {
          work();
        } catch (...) {
          errors[static_cast<std::size_t>(t)] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return res;
}

EnhancementReport evaluate_enhancement(const VideoClip& raw, const VideoClip& compressed, const VideoClip& enhanced) {
  ClipPair{raw, compressed}.validate();
  ClipPair{raw, enhanced}.validate();
  EnhancementReport r;
  r.before = quality_curve(raw, compressed);
  r.after = quality_curve(raw, enhanced);
  const auto labels = find_peaks_valleys(r.before);
  r.true_pqf = labels.pqf_indices();
  r.true_vqf = labels.vqf_indices();
  std::vector<double> all, pqf, nonpqf, vqf;
  for (std::size_t i = 0; i < r.before.size(); ++i) {
    const double d = r.after.psnr[i] - r.before.psnr[i];
    all.push_back(d);
    (labels.kind[i] == FrameKind::Pqf ? pqf : nonpqf).push_back(d);
    if (labels.kind[i] == FrameKind::Vqf) vqf.push_back(d);
  }
  r.delta_overall = mean_of(all);
  r.delta_pqf = mean_of(pqf);
  r.delta_nonpqf = mean_of(nonpqf);
  r.delta_vqf = mean_of(vqf);
  r.stats_before = curve_stats(r.before, labels);
  r.stats_after = curve_stats(r.after, find_peaks_valleys(r.after));
  return r;
}

nn::Tensor<float> frame_to_tensor(const LumaFrame& f) {
  nn::Tensor<float> t(1, 1, f.height(), f.width());
  const auto s = f.samples();
  for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = s[i] / 255.0f;
  return t;
}

LumaFrame tensor_to_frame(const nn::Tensor<float>& t) {
  if (t.n() != 1 || t.c() != 1)
    throw ShapeError("trainer_pipeline.tensor_to_frame: expected (1,1,H,W), got " + nn::shape_string(t.shape));
  return crop_to_frame(t, t.w(), t.h());
}

}  // namespace mfqe

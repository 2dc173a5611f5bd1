#include "mfqe/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mfqe/checkpoint.hpp"
#include "mfqe/degradation_sim.hpp"
#include "mfqe/errors.hpp"
#include "mfqe/gradcheck_suite.hpp"
#include "mfqe/nr_features.hpp"
#include "mfqe/pqf_detector.hpp"
#include "mfqe/quality_metrics.hpp"
#include "mfqe/svm.hpp"
#include "mfqe/trainer_pipeline.hpp"
#include "mfqe/video_io.hpp"

namespace mfqe::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::vector<std::pair<std::string, std::string>> kCommands{
    {"synth", "Render a synthetic raw clip"},
    {"degrade", "Compress a raw clip with the periodic quality schedule"},
    {"analyze", "PSNR curve, peaks/valleys and fluctuation statistics of a raw/compressed pair"},
    {"features", "Dump the 180-dimensional per-frame detector features"},
    {"train-detector", "Train the PQF detector on raw/compressed pairs"},
    {"detect", "Label the PQFs of a compressed clip"},
    {"train-mfcnn", "Train the multi-frame and single-frame enhancement networks"},
    {"enhance", "Enhance a compressed clip"},
    {"eval", "Compare compressed and enhanced clips against the raw clip"},
    {"gradcheck", "Run the finite-difference gradient suite"},
};

std::string general_help() {
  std::ostringstream s;
  s << "usage: mfqe <command> [options] [--config FILE]\n\ncommands:\n";
  for (const auto& [name, help] : kCommands) {
    s << "  " << name << std::string(16 - name.size(), ' ') << help << "\n";
  }
  s << "\nRun 'mfqe <command> --help' for the options of a command.\n"
       "A config file holds 'key = value' lines whose keys are option names without the leading dashes;\n"
       "options given on the command line take precedence.\n";
  return s.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cli.config: cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  for (int no = 1; std::getline(f, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw UsageError("cli.config: " + path.string() + ":" + std::to_string(no) + ": expected 'key = value'");
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

bool mentions(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

void forbid_overwrite(const std::vector<fs::path>& inputs, const fs::path& output) {
  for (const auto& in : inputs)
    if (fs::weakly_canonical(in) == fs::weakly_canonical(output))
      throw UsageError("cli: output " + output.string() + " would overwrite an input");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cli: cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("cli: write failed for " + path.string(), 0);
}

struct CurveRow {
  std::optional<double> psnr_in, psnr_out;
  std::optional<int> pred, truth;
};

std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream s;
  s << "frame,psnr_in,psnr_out,is_pqf_pred,is_pqf_true\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    s << i << ',' << (r.psnr_in ? fmt("%.4f", *r.psnr_in) : "") << ','
      << (r.psnr_out ? fmt("%.4f", *r.psnr_out) : "") << ',' << (r.pred ? std::to_string(*r.pred) : "") << ','
      << (r.truth ? std::to_string(*r.truth) : "") << '\n';
  }
  return s.str();
}

// Axes, one polyline per curve and a legend. Points are (frame, dB) mapped to the plot box.
std::string curve_svg(const std::vector<std::pair<std::string, std::vector<double>>>& curves) {
  const double w = 800, h = 320, left = 60, right = 20, top = 20, bottom = 40;
  double lo = 1e300, hi = -1e300;
  std::size_t n = 0;
  for (const auto& c : curves) {
    n = std::max(n, c.second.size());
    for (double v : c.second) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (n == 0) lo = hi = 0;
  if (hi - lo < 1e-9) {
    lo -= 1;
    hi += 1;
  }
  const double sx = n > 1 ? (w - left - right) / static_cast<double>(n - 1) : 0.0;
  const double sy = (h - top - bottom) / (hi - lo);
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << left << "\" y=\"" << h - 10 << "\" font-size=\"12\">frame 0.." << (n ? n - 1 : 0)
    << "</text>\n";
  s << "<text x=\"4\" y=\"" << top + 10 << "\" font-size=\"12\">" << fmt("%.2f", hi) << " dB</text>\n";
  s << "<text x=\"4\" y=\"" << h - bottom << "\" font-size=\"12\">" << fmt("%.2f", lo) << " dB</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto* color = colors[k % 4];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < curves[k].second.size(); ++i) {
      if (i) s << ' ';
      s << fmt("%.4f", left + sx * static_cast<double>(i)) << ','
        << fmt("%.4f", h - bottom - (curves[k].second[i] - lo) * sy);
    }
    s << "\"/>\n";
    s << "<text x=\"" << w - right - 160 << "\" y=\"" << top + 14 * static_cast<double>(k + 1) << "\" fill=\"" << color
      << "\" font-size=\"12\">" << curves[k].first << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<ClipPair> load_pairs(const std::vector<std::string>& raw, const std::vector<std::string>& cmp) {
  if (raw.size() != cmp.size())
    throw UsageError("cli: --raw and --cmp must list the same number of clips (" + std::to_string(raw.size()) +
                     " vs " + std::to_string(cmp.size()) + ")");
  std::vector<ClipPair> pairs;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    ClipPair p{read_y4m_file(raw[i]), read_y4m_file(cmp[i])};
    p.validate();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

NeighborMode parse_mode(const std::string& s) {
  if (s == "nearest") return NeighborMode::NearestPqf;
  if (s == "adjacent") return NeighborMode::AdjacentFrames;
  throw UsageError("cli: neighbor mode must be 'nearest' or 'adjacent', got '" + s + "'");
}

std::vector<fs::path> as_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

// ---- subcommands: each registers its options and returns the action to run after parsing.

using Action = std::function<void()>;

struct Io {
  std::ostream& out;
};

Action setup_synth(CLI::App& app, Io& io) {
  auto o = std::make_shared<std::tuple<std::string, SynthSpec, double, double>>();
  auto& [out, spec, dx, dy] = *o;
  dx = 1.0;
  dy = 0.5;
  app.add_option("--out", out, "Output Y4M path")->required();
  app.add_option("--sim.width", spec.width, "Frame width")->capture_default_str();
  app.add_option("--sim.height", spec.height, "Frame height")->capture_default_str();
  app.add_option("--sim.frames", spec.frame_count, "Frame count")->capture_default_str();
  app.add_option("--sim.dx", dx, "Horizontal displacement per frame (pixels)")->capture_default_str();
  app.add_option("--sim.dy", dy, "Vertical displacement per frame (pixels)")->capture_default_str();
  app.add_option("--sim.texture_seed", spec.texture_seed, "Texture seed")->capture_default_str();
  app.add_option("--sim.sprites", spec.sprite_count, "Independently moving sprites")->capture_default_str();
  return [o, &io] {
    auto& [out, spec, dx, dy] = *o;
    SynthSpec s = spec;
    s.motion = {{dx, dy}};
    write_y4m_file(synth_clip(s), out);
    io.out << "wrote " << out << " (" << s.frame_count << " frames, " << s.width << "x" << s.height << ")\n";
  };
}

struct DegradeOpts {
  std::string in, out;
  int period = 4;
  double base = 8.0, peak = 20.8;
};

Action setup_degrade(CLI::App& app, Io& io) {
  auto o = std::make_shared<DegradeOpts>();
  app.add_option("--in", o->in, "Raw Y4M input")->required();
  app.add_option("--out", o->out, "Compressed Y4M output")->required();
  app.add_option("--sim.period", o->period, "Quality period in frames")->capture_default_str();
  app.add_option("--sim.base_qstep", o->base, "Quantization step at the best-quality position")->capture_default_str();
  app.add_option("--sim.peak_qstep", o->peak, "Quantization step at the worst-quality position")->capture_default_str();
  return [o, &io] {
    forbid_overwrite({o->in}, o->out);
    const auto sched = QualitySchedule::triangular(o->period, o->base, o->peak);
    const auto pair = degrade_clip(read_y4m_file(o->in), sched);
    write_y4m_file(pair.compressed, o->out);
    const auto curve = quality_curve(pair);
    double mean = 0;
    for (double v : curve.psnr) mean += v;
    io.out << "wrote " << o->out << ", mean PSNR " << fmt("%.4f", mean / static_cast<double>(curve.size()))
           << " dB\n";
  };
}

struct AnalyzeOpts {
  std::string raw, cmp, out;
};

Action setup_analyze(CLI::App& app, Io& io) {
  auto o = std::make_shared<AnalyzeOpts>();
  app.add_option("--raw", o->raw, "Raw Y4M")->required();
  app.add_option("--cmp", o->cmp, "Compressed Y4M")->required();
  app.add_option("--out", o->out, "Report directory (curve.csv, curve.svg)")->required();
  return [o, &io] {
    const ClipPair pair{read_y4m_file(o->raw), read_y4m_file(o->cmp)};
    const auto curve = quality_curve(pair);
    const auto labels = find_peaks_valleys(curve);
    const auto stats = curve_stats(curve, labels);
    std::vector<CurveRow> rows(curve.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].psnr_in = curve.psnr[i];
      rows[i].truth = labels.kind[i] == FrameKind::Pqf ? 1 : 0;
    }
    const fs::path dir(o->out);
    forbid_overwrite({o->raw, o->cmp}, dir / "curve.csv");
    write_text(dir / "curve.csv", curve_csv(rows));
    write_text(dir / "curve.svg", curve_svg({{"compressed", curve.psnr}}));
    io.out << "frames " << curve.size() << "\nPQFs " << labels.pqf_indices().size() << "\nVQFs "
           << labels.vqf_indices().size() << "\nSTD " << fmt("%.4f", stats.std_db) << " dB\nPVD "
           << fmt("%.4f", stats.mean_pvd_db) << " dB\nPS " << fmt("%.4f", stats.mean_ps_frames) << " frames\n";
  };
}

struct FeaturesOpts {
  std::string in, out;
};

Action setup_features(CLI::App& app, Io& io) {
  auto o = std::make_shared<FeaturesOpts>();
  app.add_option("--in", o->in, "Compressed Y4M")->required();
  app.add_option("--out", o->out, "CSV output, one row per frame")->required();
  return [o, &io] {
    forbid_overwrite({o->in}, o->out);
    const auto clip = read_y4m_file(o->in);
    const auto per = clip_features36(clip);
    std::ostringstream s;
    static const char* offsets[] = {"n-2", "n-1", "n", "n+1", "n+2"};
    bool first = true;
    for (const char* off : offsets)
      for (const auto& name : feature_names36()) {
        s << (first ? "" : ",") << off << '.' << name;
        first = false;
      }
    s << '\n';
    for (int n = 0; n < static_cast<int>(clip.size()); ++n) {
      const auto row = context_features180(per, n);
      for (std::size_t k = 0; k < row.size(); ++k) s << (k ? "," : "") << fmt("%.6g", row[k]);
      s << '\n';
    }
    write_text(o->out, s.str());
    io.out << "wrote " << clip.size() << " rows x " << kContextFeatureCount << " features to " << o->out << "\n";
  };
}

struct TrainDetectorOpts {
  std::vector<std::string> raw, cmp;
  std::string out;
  svm::TrainConfig svm;
};

Action setup_train_detector(CLI::App& app, Io& io) {
  auto o = std::make_shared<TrainDetectorOpts>();
  app.add_option("--raw", o->raw, "Raw Y4M clips")->required();
  app.add_option("--cmp", o->cmp, "Compressed Y4M clips, aligned with --raw")->required();
  app.add_option("--out", o->out, "Checkpoint output")->required();
  app.add_option("--detector.c", o->svm.c, "SVM soft-margin C")->capture_default_str();
  app.add_option("--detector.gamma", o->svm.gamma, "RBF gamma (<= 0 selects it from the data)")->capture_default_str();
  app.add_option("--detector.kkt_tol", o->svm.kkt_tol, "SMO stopping tolerance")->capture_default_str();
  app.add_option("--seed", o->svm.seed, "Seed for the calibration folds")->capture_default_str();
  return [o, &io] {
    auto inputs = as_paths(o->raw);
    for (const auto& c : o->cmp) inputs.emplace_back(c);
    forbid_overwrite(inputs, o->out);
    const auto pairs = load_pairs(o->raw, o->cmp);
    const auto data = build_training_set(pairs);
    svm::TrainInfo info;
    const auto model = svm::train(data, o->svm, &info);
    Checkpoint c;
    put_svm(c, model);
    c.save(o->out);
    int pos = 0;
    for (int y : data.y) pos += y;
    io.out << "trained on " << data.size() << " frames (" << pos << " PQFs), " << model.support_vectors.size()
           << " support vectors, " << (info.converged ? "converged" : "iteration cap reached") << "\nwrote "
           << o->out << "\n";
  };
}

struct DetectOpts {
  std::string model, cmp, raw, out;
  DetectorConfig det;
};

svm::Model load_detector(const std::string& path) {
  const auto c = Checkpoint::load(path);
  if (!has_svm(c)) throw FormatError("cli: " + path + " holds no detector (svm.*) entries");
  return get_svm(c);
}

Action setup_detect(CLI::App& app, Io& io) {
  auto o = std::make_shared<DetectOpts>();
  app.add_option("--model", o->model, "Checkpoint holding the detector")->required();
  app.add_option("--cmp", o->cmp, "Compressed Y4M")->required();
  app.add_option("--raw", o->raw, "Raw Y4M; fills psnr_in and is_pqf_true");
  app.add_option("--out", o->out, "CSV output")->required();
  app.add_option("--detector.d_max", o->det.d_max, "Longest allowed run of non-PQFs")->capture_default_str();
  app.add_option("--detector.threshold", o->det.prob_threshold, "Probability threshold")->capture_default_str();
  return [o, &io] {
    std::vector<fs::path> inputs{o->model, o->cmp};
    if (!o->raw.empty()) inputs.emplace_back(o->raw);
    forbid_overwrite(inputs, o->out);
    const auto model = load_detector(o->model);
    const auto clip = read_y4m_file(o->cmp);
    const auto r = detect(clip, model, o->det);
    std::vector<CurveRow> rows(clip.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].pred = r.labels[i];
    if (!o->raw.empty()) {
      const ClipPair pair{read_y4m_file(o->raw), clip};
      const auto curve = quality_curve(pair);
      const auto truth = true_pqf_labels(pair);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].psnr_in = curve.psnr[i];
        rows[i].truth = truth[i];
      }
      const auto m = evaluate(r.labels, truth);
      io.out << "precision " << fmt("%.4f", m.precision) << " recall " << fmt("%.4f", m.recall) << " F1 "
             << fmt("%.4f", m.f1) << "\n";
    }
    write_text(o->out, curve_csv(rows));
    io.out << "detected " << r.pqf_indices().size() << " PQFs in " << clip.size() << " frames\n";
  };
}

struct TrainMfcnnOpts {
  std::vector<std::string> raw, cmp;
  std::string detector, out, report;
  Schedule schedule;
  SampleConfig samples;
  std::string neighbors = "nearest";
  int sf_steps = 1000;
  int max_samples = 0;
  McConfig mc;
  QeConfig qe;
  DetectorConfig det;
  std::uint64_t seed = 0;
  int log_every = 0;
};

Action setup_train_mfcnn(CLI::App& app, Io& io) {
  auto o = std::make_shared<TrainMfcnnOpts>();
  app.add_option("--raw", o->raw, "Raw Y4M clips")->required();
  app.add_option("--cmp", o->cmp, "Compressed Y4M clips, aligned with --raw")->required();
  app.add_option("--detector", o->detector,
                 "Checkpoint with a detector; its labels pick the PQFs (default: true labels from --raw)");
  app.add_option("--out", o->out, "Checkpoint output")->required();
  app.add_option("--report", o->report, "Loss curve CSV output");
  auto& s = o->schedule;
  app.add_option("--train.steps", s.total_steps, "Joint training steps")->capture_default_str();
  app.add_option("--train.sf_steps", o->sf_steps, "Single-frame network steps (0 skips it)")->capture_default_str();
  app.add_option("--train.batch", s.batch, "Batch size")->capture_default_str();
  app.add_option("--train.lr", s.lr, "Adam learning rate")->capture_default_str();
  app.add_option("--train.window", s.window, "Window (steps) of the phase-switch rule")->capture_default_str();
  app.add_option("--train.min_rel", s.min_rel_improvement, "Phase switch when L_MC improves less than this")
      ->capture_default_str();
  app.add_option("--train.max_phase1", s.max_phase1_steps, "Longest phase 1 in steps")->capture_default_str();
  app.add_option("--train.phase1_a", s.phase1.a, "Phase-1 weight of L_MC")->capture_default_str();
  app.add_option("--train.phase1_b", s.phase1.b, "Phase-1 weight of L_QE")->capture_default_str();
  app.add_option("--train.phase2_a", s.phase2.a, "Phase-2 weight of L_MC")->capture_default_str();
  app.add_option("--train.phase2_b", s.phase2.b, "Phase-2 weight of L_QE")->capture_default_str();
  app.add_option("--train.patch", o->samples.patch, "Patch side")->capture_default_str();
  app.add_option("--train.stride", o->samples.stride, "Patch grid stride")->capture_default_str();
  app.add_option("--train.jitter", o->samples.jitter, "Random patch offset")->capture_default_str();
  app.add_option("--train.neighbors", o->neighbors, "Reference frames: nearest | adjacent")->capture_default_str();
  app.add_option("--train.max_samples", o->max_samples, "Keep only the first N samples (0 keeps all)")
      ->capture_default_str();
  app.add_option("--train.log_every", o->log_every, "Print losses every N steps (0 disables)")->capture_default_str();
  app.add_option("--mc.max_disp", o->mc.max_displacement, "Per-stage flow bound (pixels)")->capture_default_str();
  app.add_option("--mc.width", o->mc.width, "MC hidden width")->capture_default_str();
  app.add_option("--mc.reduction", o->mc.reduction, "MC width divisor")->capture_default_str();
  app.add_option("--mc.strict", o->mc.strict_eq6, "Drop the coarse-stage MC loss terms")->capture_default_str();
  app.add_option("--qe.reduction", o->qe.reduction, "QE width divisor")->capture_default_str();
  app.add_option("--qe.conv9_gain", o->qe.conv9_gain, "Init gain of the QE output layer")->capture_default_str();
  app.add_option("--detector.d_max", o->det.d_max, "Longest allowed run of non-PQFs")->capture_default_str();
  app.add_option("--detector.threshold", o->det.prob_threshold, "Probability threshold")->capture_default_str();
  app.add_option("--seed", o->seed, "Seed for initialization, sampling and shuffling")->capture_default_str();
  app.add_option("--workers", s.workers, "Worker threads")->capture_default_str();
  return [o, &io] {
    auto inputs = as_paths(o->raw);
    for (const auto& c : o->cmp) inputs.emplace_back(c);
    if (!o->detector.empty()) inputs.emplace_back(o->detector);
    forbid_overwrite(inputs, o->out);
    if (!o->report.empty()) forbid_overwrite(inputs, o->report);
    const auto pairs = load_pairs(o->raw, o->cmp);

    std::vector<DetectionResult> det;
    std::optional<svm::Model> detector;
    if (!o->detector.empty()) detector = load_detector(o->detector);
    for (const auto& p : pairs) {
      if (detector) {
        det.push_back(detect(p.compressed, *detector, o->det));
      } else {
        DetectionResult d;
        d.labels = true_pqf_labels(p);
        d.probs.assign(d.labels.size(), 0.0);
        det.push_back(std::move(d));
      }
    }
    auto sc = o->samples;
    sc.mode = parse_mode(o->neighbors);
    sc.seed = o->seed;
    auto set = build_samples(pairs, det, sc);
    auto pqf = build_pqf_samples(pairs, det, sc);
    if (set.skipped_clips) io.out << "warning: " << set.skipped_clips << " clip(s) without PQFs skipped\n";
    if (o->max_samples > 0) {
      if (set.samples.size() > static_cast<std::size_t>(o->max_samples))
        set.samples.resize(static_cast<std::size_t>(o->max_samples));
      if (pqf.samples.size() > static_cast<std::size_t>(o->max_samples))
        pqf.samples.resize(static_cast<std::size_t>(o->max_samples));
    }
    io.out << set.samples.size() << " multi-frame samples, " << pqf.samples.size() << " PQF samples\n";

    auto model = MfcnnModel::init(o->mc, o->qe, o->seed);
    std::function<void(const StepRecord&)> log;
    if (o->log_every > 0)
      log = [&io, every = o->log_every](const StepRecord& r) {
        if ((r.step + 1) % every == 0)
          io.out << "step " << r.step + 1 << " phase " << r.phase << " l_mc " << fmt("%.6g", r.l_mc) << " l_qe "
                 << fmt("%.6g", r.l_qe) << "\n";
      };
    auto sched = o->schedule;
    sched.dump_path = fs::path(o->out).replace_extension(".diverged.ckpt");
    const auto report = train_mfcnn(set.samples, sched, model, o->seed, log);
    TrainReport sf;
    if (o->sf_steps > 0 && !pqf.samples.empty()) {
      auto s2 = sched;
      s2.total_steps = o->sf_steps;
      sf = train_single_frame(pqf.samples, s2, model, o->seed ^ 0x9E3779B97F4A7C15ULL);
    }
    auto ckpt = to_checkpoint(model);
    if (detector) put_svm(ckpt, *detector);
    ckpt.save(o->out);
    if (!o->report.empty()) {
      std::ostringstream csv;
      report.write_csv(csv);
      write_text(o->report, csv.str());
    }
    const auto& last = report.steps.back();
    if (report.phase_switch_step >= 0) io.out << "phase switch at step " << report.phase_switch_step << "\n";
    else io.out << "no phase switch\n";
    io.out << "final l_mc " << fmt("%.6g", last.l_mc)
           << " l_qe " << fmt("%.6g", last.l_qe) << "\n";
    if (!sf.steps.empty()) io.out << "single-frame final loss " << fmt("%.6g", sf.steps.back().l_qe) << "\n";
    io.out << "wrote " << o->out << "\n";
  };
}

struct EnhanceOpts {
  std::string model, detector, cmp, out, provenance;
  EnhanceConfig cfg;
  std::string neighbors = "nearest";
};

Action setup_enhance(CLI::App& app, Io& io) {
  auto o = std::make_shared<EnhanceOpts>();
  app.add_option("--model", o->model, "Checkpoint from train-mfcnn")->required();
  app.add_option("--detector", o->detector, "Checkpoint with the detector (default: --model)");
  app.add_option("--cmp", o->cmp, "Compressed Y4M")->required();
  app.add_option("--out", o->out, "Enhanced Y4M output")->required();
  app.add_option("--provenance", o->provenance, "Per-frame provenance CSV output");
  app.add_option("--train.neighbors", o->neighbors, "Reference frames: nearest | adjacent")->capture_default_str();
  app.add_option("--detector.d_max", o->cfg.detector.d_max, "Longest allowed run of non-PQFs")->capture_default_str();
  app.add_option("--detector.threshold", o->cfg.detector.prob_threshold, "Probability threshold")
      ->capture_default_str();
  app.add_option("--workers", o->cfg.workers, "Worker threads")->capture_default_str();
  return [o, &io] {
    std::vector<fs::path> inputs{o->model, o->cmp};
    if (!o->detector.empty()) inputs.emplace_back(o->detector);
    forbid_overwrite(inputs, o->out);
    if (!o->provenance.empty()) forbid_overwrite(inputs, o->provenance);
    const auto ckpt = Checkpoint::load(o->model);
    const auto model = model_from_checkpoint(ckpt);
    svm::Model det;
    if (!o->detector.empty()) {
      det = load_detector(o->detector);
    } else {
      if (!has_svm(ckpt)) throw UsageError("cli.enhance: " + o->model + " holds no detector; pass --detector");
      det = get_svm(ckpt);
    }
    auto cfg = o->cfg;
    cfg.mode = parse_mode(o->neighbors);
    const auto res = enhance_clip(read_y4m_file(o->cmp), model, det, cfg);
    write_y4m_file(res.clip, o->out);
    if (!o->provenance.empty()) {
      std::ostringstream s;
      s << "frame,provenance,is_pqf_pred\n";
      for (std::size_t i = 0; i < res.provenance.size(); ++i)
        s << i << ',' << provenance_name(res.provenance[i]) << ',' << res.detection.labels[i] << '\n';
      write_text(o->provenance, s.str());
    }
    if (!res.warning.empty()) io.out << "warning: " << res.warning << "\n";
    io.out << "enhanced " << res.clip.size() << " frames (" << res.detection.pqf_indices().size()
           << " PQFs)\nwrote " << o->out << "\n";
  };
}

struct EvalOpts {
  std::string raw, cmp, enh, out, model;
  DetectorConfig det;
};

Action setup_eval(CLI::App& app, Io& io) {
  auto o = std::make_shared<EvalOpts>();
  app.add_option("--raw", o->raw, "Raw Y4M")->required();
  app.add_option("--cmp", o->cmp, "Compressed Y4M")->required();
  app.add_option("--enh", o->enh, "Enhanced Y4M")->required();
  app.add_option("--out", o->out, "Report directory (curve.csv, curve.svg, summary.json)")->required();
  app.add_option("--model", o->model, "Checkpoint with a detector; fills is_pqf_pred");
  app.add_option("--detector.d_max", o->det.d_max, "Longest allowed run of non-PQFs")->capture_default_str();
  app.add_option("--detector.threshold", o->det.prob_threshold, "Probability threshold")->capture_default_str();
  return [o, &io] {
    const fs::path dir(o->out);
    std::vector<fs::path> inputs{o->raw, o->cmp, o->enh};
    for (const char* f : {"curve.csv", "curve.svg", "summary.json"}) forbid_overwrite(inputs, dir / f);
    const auto raw = read_y4m_file(o->raw);
    const auto cmp = read_y4m_file(o->cmp);
    const auto enh = read_y4m_file(o->enh);
    const auto r = evaluate_enhancement(raw, cmp, enh);
    std::vector<CurveRow> rows(r.before.size());
    std::vector<int> truth(rows.size(), 0);
    for (int i : r.true_pqf) truth[static_cast<std::size_t>(i)] = 1;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].psnr_in = r.before.psnr[i];
      rows[i].psnr_out = r.after.psnr[i];
      rows[i].truth = truth[i];
    }
    if (!o->model.empty()) {
      const auto labels = detect(cmp, load_detector(o->model), o->det).labels;
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i].pred = labels[i];
    }
    write_text(dir / "curve.csv", curve_csv(rows));
    write_text(dir / "curve.svg", curve_svg({{"compressed", r.before.psnr}, {"enhanced", r.after.psnr}}));
    nlohmann::ordered_json j;
    j["frames"] = rows.size();
    j["delta_psnr"] = {{"overall", r.delta_overall}, {"pqf", r.delta_pqf}, {"non_pqf", r.delta_nonpqf},
                       {"vqf", r.delta_vqf}};
    j["std_db"] = {{"before", r.stats_before.std_db}, {"after", r.stats_after.std_db}};
    j["mean_pvd_db"] = {{"before", r.stats_before.mean_pvd_db}, {"after", r.stats_after.mean_pvd_db}};
    write_text(dir / "summary.json", j.dump(2) + "\n");
    io.out << "delta PSNR overall " << fmt("%.4f", r.delta_overall) << " dB\n  PQF " << fmt("%.4f", r.delta_pqf)
           << " dB\n  non-PQF " << fmt("%.4f", r.delta_nonpqf) << " dB\n  VQF " << fmt("%.4f", r.delta_vqf)
           << " dB\nSTD " << fmt("%.4f", r.stats_before.std_db) << " -> " << fmt("%.4f", r.stats_after.std_db)
           << " dB\nPVD " << fmt("%.4f", r.stats_before.mean_pvd_db) << " -> "
           << fmt("%.4f", r.stats_after.mean_pvd_db) << " dB\n";
  };
}

struct GradcheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Action setup_gradcheck(CLI::App& app, Io& io) {
  auto o = std::make_shared<GradSuiteOptions>();
  app.add_option("--instances", o->instances, "Random instances per op")->capture_default_str();
  app.add_option("--seed", o->seed, "Seed")->capture_default_str();
  return [o, &io] {
    bool ok = true;
    for (const auto& r : run_gradcheck_suite(*o)) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "%-16s %2d-bit  max_rel_error %.3e  (< %.0e)  checked %ld  skipped %ld  %s\n",
                    r.op.c_str(), r.bits, r.max_rel_error, r.threshold, r.checked, r.skipped_kinks,
                    r.passed() ? "ok" : "FAIL");
      io.out << buf;
      ok = ok && r.passed();
    }
    if (!ok) throw GradcheckFailed("cli.gradcheck: at least one op exceeded its tolerance");
  };
}

int dispatch(const std::vector<std::string>& args, std::ostream& out) {
  if (args.empty()) throw UsageError("cli: missing command\n" + general_help());
  const std::string cmd = args[0];
  if (cmd == "--help" || cmd == "-h" || cmd == "help") {
    out << general_help();
    return kExitOk;
  }
  const auto it = std::find_if(kCommands.begin(), kCommands.end(), [&](const auto& c) { return c.first == cmd; });
  if (it == kCommands.end()) throw UsageError("cli: unknown command '" + cmd + "'\n" + general_help());

  std::vector<std::string> rest;
  std::optional<std::string> config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("cli: --config needs a file");
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }

  Io io{out};
  CLI::App app(it->second, "mfqe " + cmd);
  app.set_help_flag("-h,--help", "Print this help message and exit");
  app.add_option("--config", "Config file of 'key = value' lines (keys are option names)");
  Action action;
  if (cmd == "synth") action = setup_synth(app, io);
  else if (cmd == "degrade") action = setup_degrade(app, io);
  else if (cmd == "analyze") action = setup_analyze(app, io);
  else if (cmd == "features") action = setup_features(app, io);
  else if (cmd == "train-detector") action = setup_train_detector(app, io);
  else if (cmd == "detect") action = setup_detect(app, io);
  else if (cmd == "train-mfcnn") action = setup_train_mfcnn(app, io);
  else if (cmd == "enhance") action = setup_enhance(app, io);
  else if (cmd == "eval") action = setup_eval(app, io);
  else action = setup_gradcheck(app, io);

  std::vector<std::string> tokens;
  if (config) {
    for (const auto& [key, value] : read_config(*config)) {
      const std::string flag = "--" + key;
      const CLI::Option* opt = nullptr;
      for (const auto* candidate : app.get_options())
        if (candidate->check_lname(key) && key != "config" && key != "help") opt = candidate;
      if (!opt) throw UsageError("cli.config: unknown key '" + key + "' for command '" + cmd + "'");
      if (mentions(rest, flag)) continue;
      tokens.push_back(flag);
      std::istringstream vs(value);
      for (std::string v; vs >> v;) tokens.push_back(v);
    }
  }
  tokens.insert(tokens.end(), rest.begin(), rest.end());
  std::reverse(tokens.begin(), tokens.end());
  try {
    app.parse(tokens);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    throw UsageError("cli." + cmd + ": " + e.what() + "\n" + app.help());
  }
  action();
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const GradcheckFailed& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DegenerateInputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace mfqe::cli

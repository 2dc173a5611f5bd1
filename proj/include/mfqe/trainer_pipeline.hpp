#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfqe/checkpoint.hpp"
#include "mfqe/mc_subnet.hpp"
#include "mfqe/pqf_detector.hpp"
#include "mfqe/qe_subnet.hpp"
#include "mfqe/quality_metrics.hpp"
#include "mfqe/video_io.hpp"

namespace mfqe {

enum class NeighborMode { NearestPqf, AdjacentFrames };

/// Reference frames (p1, p2) for non-PQF n. A missing side duplicates the other.
/// Throws ArgumentError when `is_pqf[n]` is set or no reference exists.
std::pair<int, int> neighbor_pair(std::span<const int> is_pqf, int n, NeighborMode mode);

/// Co-located patches in [0,1], each (1, 1, patch, patch).
struct TrainingSample {
  nn::Tensor<float> f_np, f_p1, f_p2;
  nn::Tensor<float> f_r_np, f_r_p1, f_r_p2;
  int clip = 0;
  int np = 0, p1 = 0, p2 = 0;
  int x = 0, y = 0;
};

/// A PQF patch for the single-frame network.
struct PqfSample {
  nn::Tensor<float> f, f_r;
  int clip = 0;
  int frame = 0;
  int x = 0, y = 0;
};

struct SampleConfig {
  int patch = 64;
  int stride = 48;
  int jitter = 8;  // each grid position is shifted by up to this many pixels
  NeighborMode mode = NeighborMode::NearestPqf;
  std::uint64_t seed = 0;

  void validate() const;
};

template <class S>
struct SampleSet {
  std::vector<S> samples;
  int skipped_clips = 0;  // clips without a detected PQF
};

/// Patch positions along one axis: stride grid plus seeded jitter, always inside the frame.
std::vector<int> patch_positions(int extent, const SampleConfig& cfg, std::mt19937_64& rng);

/// `detections[i]` labels the compressed frames of `pairs[i]`.
SampleSet<TrainingSample> build_samples(std::span<const ClipPair> pairs, std::span<const DetectionResult> detections,
                                        const SampleConfig& cfg);
SampleSet<PqfSample> build_pqf_samples(std::span<const ClipPair> pairs, std::span<const DetectionResult> detections,
                                       const SampleConfig& cfg);

struct LossWeights {
  double a = 1.0;
  double b = 0.01;

  void validate() const;
};

struct Schedule {
  LossWeights phase1{1.0, 0.01};
  LossWeights phase2{0.01, 1.0};
  int window = 200;
  double min_rel_improvement = 1e-3;
  int max_phase1_steps = 2000;
  int batch = 64;
  double lr = 1e-4;
  int total_steps = 4000;
  int workers = 1;
  // Written (as a checkpoint) when the loss turns non-finite.
  std::optional<std::filesystem::path> dump_path;

  void validate() const;
};

/// Multi-frame network (mc.*, qe.*) plus the single-frame one (qe_sf.*).
struct MfcnnModel {
  McConfig mc;
  QeConfig qe;
  nn::ParamStore<float> params;

  static MfcnnModel init(const McConfig& mc, const QeConfig& qe, std::uint64_t seed);
};

/// Parameters plus "cfg.mc" and "cfg.qe" config echoes.
Checkpoint to_checkpoint(const MfcnnModel& model);
/// Throws FormatError when a parameter required by the echoed config is missing or misshaped.
MfcnnModel model_from_checkpoint(const Checkpoint& ckpt);

struct StepRecord {
  int step = 0;
  double l_mc = 0.0;
  double l_qe = 0.0;
  double total = 0.0;
  int phase = 1;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  int phase_switch_step = -1;  // first step trained with phase-2 weights

  /// Header "step,l_mc,l_qe,total,phase".
  void write_csv(std::ostream& out) const;
};

struct Losses {
  double l_mc = 0.0;
  double l_qe = 0.0;
  double total = 0.0;
};

/// Both PQFs go through the shared MC net against the non-PQF; the two warped
/// compressed PQFs feed the QE net.
/// L_MC sums the two branch losses, L_QE = mse(f_np + R, f_r_np), total = a L_MC + b L_QE.
template <class T>
struct SampleGraph {
  nn::Var<T> l_mc, l_qe, total, enhanced;
};
template <class T>
SampleGraph<T> sample_graph(const TrainingSample& s, const nn::ParamStore<T>& params, const McConfig& mc,
                            const QeConfig& qe, const LossWeights& w);

/// Mean losses over `samples` without recording a graph.
Losses evaluate_losses(const MfcnnModel& model, std::span<const TrainingSample> samples, const LossWeights& w);

/// Trains mc.* and qe.* in place.
/// Throws NumericalError when a loss becomes non-finite.
TrainReport train_mfcnn(std::span<const TrainingSample> samples, const Schedule& schedule, MfcnnModel& model,
                        std::uint64_t seed, const std::function<void(const StepRecord&)>& on_step = {});

/// Trains qe_sf.* on PQF patches with mse(f + R, f_r). Records carry the loss in l_qe.
TrainReport train_single_frame(std::span<const PqfSample> samples, const Schedule& schedule, MfcnnModel& model,
                               std::uint64_t seed, const std::function<void(const StepRecord&)>& on_step = {});

enum class Provenance { PqfEnhanced, NonPqfEnhanced, FallbackSingleFrame };
const char* provenance_name(Provenance p);

struct EnhanceConfig {
  DetectorConfig detector;
  NeighborMode mode = NeighborMode::NearestPqf;
  int workers = 1;
};

struct EnhanceResult {
  VideoClip clip;
  std::vector<Provenance> provenance;
  DetectionResult detection;
  std::string warning;  // set when no PQF was found
};

/// Runs detection with `detector` and enhances every frame. Chroma is copied through.
EnhanceResult enhance_clip(const VideoClip& compressed, const MfcnnModel& model, const svm::Model& detector,
                           const EnhanceConfig& cfg);
/// Same with precomputed labels.
EnhanceResult enhance_clip(const VideoClip& compressed, const MfcnnModel& model, const DetectionResult& detection,
                           const EnhanceConfig& cfg);

struct EnhancementReport {
  QualityCurve before, after;
  std::vector<int> true_pqf;  // from the raw/compressed curve
  std::vector<int> true_vqf;
  double delta_overall = 0.0;
  double delta_pqf = 0.0;
  double delta_nonpqf = 0.0;
  double delta_vqf = 0.0;
  CurveStats stats_before, stats_after;
};

/// Deltas are mean(after - before) per group; an empty group reports 0.
/// Peak/valley statistics after enhancement use the enhanced curve's own extrema.
EnhancementReport evaluate_enhancement(const VideoClip& raw, const VideoClip& compressed, const VideoClip& enhanced);

/// (1, 1, H, W) in [0,1].
nn::Tensor<float> frame_to_tensor(const LumaFrame& f);
/// Rounds and clamps to 8 bits.
LumaFrame tensor_to_frame(const nn::Tensor<float>& t);

}  // namespace mfqe

#pragma once

#include <vector>

#include "mfqe/video_io.hpp"

namespace mfqe {

inline constexpr double kPsnrCap = 100.0;

/// Per-frame PSNR in dB, capped at kPsnrCap.
struct QualityCurve {
  std::vector<double> psnr;
  std::size_t size() const noexcept { return psnr.size(); }
};

enum class FrameKind { Neither, Pqf, Vqf };

struct PeakValleyLabels {
  std::vector<FrameKind> kind;

  std::vector<int> pqf_indices() const;
  std::vector<int> vqf_indices() const;
  /// 1 for PQF, 0 otherwise.
  std::vector<int> pqf_mask() const;
};

struct CurveStats {
  double std_db = 0.0;
  double mean_pvd_db = 0.0;
  double mean_ps_frames = 0.0;
  std::vector<double> per_pqf_pvd;
  std::vector<double> per_gap_ps;
};

/// 10*log10(255^2 / MSE) on luma; identical frames give kPsnrCap.
double psnr(const LumaFrame& a, const LumaFrame& b);
QualityCurve quality_curve(const ClipPair& pair);
/// Curve of `test` against `reference`, frame by frame.
QualityCurve quality_curve(const VideoClip& reference, const VideoClip& test);

/// Strict local maxima (PQF) and minima (VQF); ties and endpoints are neither.
PeakValleyLabels find_peaks_valleys(const QualityCurve& curve);

/// Population STD, mean peak-valley difference (nearest valley, later one on ties)
/// and mean peak separation.
CurveStats curve_stats(const QualityCurve& curve, const PeakValleyLabels& labels);

}  // namespace mfqe

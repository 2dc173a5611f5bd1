#include "mfqe/quality_metrics.hpp"

#include <cmath>
#include <cstdlib>
#include <numeric>

#include "mfqe/errors.hpp"

namespace mfqe {

std::vector<int> PeakValleyLabels::pqf_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < kind.size(); ++i)
    if (kind[i] == FrameKind::Pqf) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> PeakValleyLabels::vqf_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < kind.size(); ++i)
    if (kind[i] == FrameKind::Vqf) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> PeakValleyLabels::pqf_mask() const {
  std::vector<int> out(kind.size(), 0);
  for (std::size_t i = 0; i < kind.size(); ++i) out[i] = kind[i] == FrameKind::Pqf ? 1 : 0;
  return out;
}

double psnr(const LumaFrame& a, const LumaFrame& b) {
  if (!a.same_dims(b))
    throw ArgumentError("quality_metrics.psnr: dimension mismatch " + std::to_string(a.width()) + "x" +
                        std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                        std::to_string(b.height()));
  const auto sa = a.samples();
  const auto sb = b.samples();
  double sse = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double d = static_cast<double>(sa[i]) - static_cast<double>(sb[i]);
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(sa.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

QualityCurve quality_curve(const VideoClip& reference, const VideoClip& test) {
  if (reference.size() != test.size())
    throw ArgumentError("quality_metrics.quality_curve: frame counts differ (" +
                        std::to_string(reference.size()) + " vs " + std::to_string(test.size()) + ")");
  QualityCurve c;
  c.psnr.resize(reference.size());
  for (std::size_t t = 0; t < reference.size(); ++t) c.psnr[t] = psnr(reference.frames[t], test.frames[t]);
  return c;
}

QualityCurve quality_curve(const ClipPair& pair) { return quality_curve(pair.raw, pair.compressed); }

PeakValleyLabels find_peaks_valleys(const QualityCurve& curve) {
  const auto& p = curve.psnr;
  if (p.size() < 3)
    throw ArgumentError("quality_metrics.find_peaks_valleys: curve length " + std::to_string(p.size()) +
                        " < 3");
  PeakValleyLabels labels;
  labels.kind.assign(p.size(), FrameKind::Neither);
  for (std::size_t t = 1; t + 1 < p.size(); ++t) {
    if (p[t] > p[t - 1] && p[t] > p[t + 1])
      labels.kind[t] = FrameKind::Pqf;
    else if (p[t] < p[t - 1] && p[t] < p[t + 1])
      labels.kind[t] = FrameKind::Vqf;
  }
  return labels;
}

CurveStats curve_stats(const QualityCurve& curve, const PeakValleyLabels& labels) {
  const auto& p = curve.psnr;
  CurveStats s;
  if (p.empty()) return s;
  const double n = static_cast<double>(p.size());
  const double mean = std::accumulate(p.begin(), p.end(), 0.0) / n;
  double var = 0.0;
  for (double v : p) var += (v - mean) * (v - mean);
  s.std_db = std::sqrt(var / n);

  const auto peaks = labels.pqf_indices();
  const auto valleys = labels.vqf_indices();
  if (!valleys.empty()) {
    for (int pk : peaks) {
      int best = -1;
      int best_dist = 0;
      // Valleys are ascending, so <= hands distance ties to the later valley.
      for (int v : valleys) {
        const int d = std::abs(v - pk);
        if (best < 0 || d <= best_dist) {
          best = v;
          best_dist = d;
        }
      }
      s.per_pqf_pvd.push_back(p[static_cast<std::size_t>(pk)] - p[static_cast<std::size_t>(best)]);
    }
  }
  for (std::size_t i = 1; i < peaks.size(); ++i) s.per_gap_ps.push_back(peaks[i] - peaks[i - 1]);

  auto mean_of = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  s.mean_pvd_db = mean_of(s.per_pqf_pvd);
  s.mean_ps_frames = mean_of(s.per_gap_ps);
  return s;
}

}  // namespace mfqe

#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "mfqe/video_io.hpp"

namespace mfqe {

inline constexpr int kSpatialFeatureCount = 36;
inline constexpr int kContextFrames = 5;
inline constexpr int kContextFeatureCount = kSpatialFeatureCount * kContextFrames;

/// Feature layout, per scale (full resolution first, then 2x2-mean-pooled):
///   [0] GGD shape alpha of MSCN, [1] GGD variance of MSCN,
///   then for each neighbor product (horizontal, vertical, main diagonal,
///   secondary diagonal): AGGD shape nu, mean eta, left variance, right variance.
/// Scale two occupies indices 18..35 in the same order.
using SpatialFeatures36 = std::array<double, kSpatialFeatureCount>;

/// Features of frames n-2, n-1, n, n+1, n+2 concatenated in that order.
using FrameContextFeatures = std::array<double, kContextFeatureCount>;

/// Real-valued raster used for MSCN coefficients.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<double> v;
  double at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
};

struct GgdFit {
  double alpha;
  double sigma_sq;
};

struct AggdFit {
  double nu;
  double eta;
  double sigma_l_sq;
  double sigma_r_sq;
};

/// Names of the 36 entries, e.g. "s1.ggd_alpha", "s2.d1.sigma_r_sq".
const std::array<std::string, kSpatialFeatureCount>& feature_names36();

/// Generalized-Gaussian moment ratio Gamma(1/a)Gamma(3/a)/Gamma(2/a)^2.
double ggd_moment_ratio(double alpha);

/// Mean-subtracted contrast-normalized coefficients: 7x7 Gaussian window
/// (sigma 7/6), C = 1, edge replication.
Raster mscn_transform(const LumaFrame& frame);
Raster mscn_transform(const Raster& image);

GgdFit fit_ggd(std::span<const double> samples);
AggdFit fit_aggd(std::span<const double> samples);

SpatialFeatures36 frame_features36(const LumaFrame& frame);
/// frame_features36 for every frame of the clip.
std::vector<SpatialFeatures36> clip_features36(const VideoClip& clip);

/// Context vector for frame n; neighbor indices clamp to [0, N-1].
FrameContextFeatures context_features180(const VideoClip& clip, int n);
FrameContextFeatures context_features180(std::span<const SpatialFeatures36> per_frame, int n);

}  // namespace mfqe

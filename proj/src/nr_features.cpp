#include "mfqe/nr_features.hpp"

#include <algorithm>
#include <cmath>

#include "mfqe/errors.hpp"

namespace mfqe {
namespace {

constexpr double kGridMin = 0.2;
constexpr double kGridMax = 10.0;
constexpr double kGridStep = 0.001;
constexpr std::size_t kMinFitSamples = 100;

struct RatioGrid {
  std::vector<double> alpha;
  std::vector<double> ratio;  // strictly decreasing in alpha
};

const RatioGrid& ratio_grid() {
  static const RatioGrid grid = [] {
    RatioGrid g;
    const auto n = static_cast<std::size_t>(std::lround((kGridMax - kGridMin) / kGridStep)) + 1;
    g.alpha.resize(n);
    g.ratio.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      g.alpha[i] = kGridMin + kGridStep * static_cast<double>(i);
      g.ratio[i] = ggd_moment_ratio(g.alpha[i]);
    }
    return g;
  }();
  return grid;
}

// Grid alpha whose moment ratio is nearest to target.
double lookup_alpha(double target) {
  const auto& g = ratio_grid();
  // ratio is decreasing: find first entry with ratio <= target.
  auto it = std::lower_bound(g.ratio.begin(), g.ratio.end(), target, std::greater<>());
  if (it == g.ratio.begin()) return g.alpha.front();
  if (it == g.ratio.end()) return g.alpha.back();
  const auto i = static_cast<std::size_t>(it - g.ratio.begin());
  return (std::abs(g.ratio[i] - target) < std::abs(g.ratio[i - 1] - target)) ? g.alpha[i] : g.alpha[i - 1];
}

const std::array<double, 7>& gaussian_window() {
  static const auto w = [] {
    std::array<double, 7> k{};
    const double sigma = 7.0 / 6.0;
    double sum = 0;
    for (int i = 0; i < 7; ++i) {
      const double d = i - 3;
      k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
      sum += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
  }();
  return w;
}

// Separable 7x7 Gaussian blur with edge replication.
std::vector<double> blur(const std::vector<double>& src, int w, int h) {
  const auto& k = gaussian_window();
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -3; i <= 3; ++i) s += k[static_cast<std::size_t>(i + 3)] * src[static_cast<std::size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -3; i <= 3; ++i) s += k[static_cast<std::size_t>(i + 3)] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  return out;
}

Raster to_raster(const LumaFrame& f) {
  Raster r{f.width(), f.height(), {}};
  r.v.assign(f.samples().begin(), f.samples().end());
  return r;
}

Raster downsample2(const Raster& r) {
  Raster d{r.width / 2, r.height / 2, {}};
  d.v.resize(static_cast<std::size_t>(d.width) * d.height);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x)
      d.v[static_cast<std::size_t>(y) * d.width + x] =
          0.25 * (r.at(2 * x, 2 * y) + r.at(2 * x + 1, 2 * y) + r.at(2 * x, 2 * y + 1) + r.at(2 * x + 1, 2 * y + 1));
  return d;
}

// Neighbor offsets of the four pairwise products.
constexpr std::array<std::array<int, 2>, 4> kOrientations{{{1, 0}, {0, 1}, {1, 1}, {-1, 1}}};

void scale_features(const Raster& image, double* out, int base_index) {
  const Raster m = mscn_transform(image);
  auto fail = [&](const DegenerateInputError& e, int offset) {
    throw DegenerateInputError(std::string(e.what()) + " (feature " + std::to_string(base_index + offset) + ")",
                               base_index + offset);
  };
  try {
    const GgdFit g = fit_ggd(m.v);
    out[0] = g.alpha;
    out[1] = g.sigma_sq;
  } catch (const DegenerateInputError& e) {
    fail(e, 0);
  }
  std::vector<double> prod;
  prod.reserve(m.v.size());
  for (std::size_t o = 0; o < kOrientations.size(); ++o) {
    const int dx = kOrientations[o][0];
    const int dy = kOrientations[o][1];
    prod.clear();
    for (int y = 0; y + dy < m.height; ++y)
      for (int x = std::max(0, -dx); x < m.width && x + dx < m.width; ++x) prod.push_back(m.at(x, y) * m.at(x + dx, y + dy));
    const int off = 2 + 4 * static_cast<int>(o);
    try {
      const AggdFit a = fit_aggd(prod);
      out[off] = a.nu;
      out[off + 1] = a.eta;
      out[off + 2] = a.sigma_l_sq;
      out[off + 3] = a.sigma_r_sq;
    } catch (const DegenerateInputError& e) {
      fail(e, off);
    }
  }
}

}  // namespace

const std::array<std::string, kSpatialFeatureCount>& feature_names36() {
  static const auto names = [] {
    std::array<std::string, kSpatialFeatureCount> n;
    const char* orient[] = {"h", "v", "d1", "d2"};
    for (int s = 0; s < 2; ++s) {
      const std::string p = "s" + std::to_string(s + 1) + ".";
      const int b = 18 * s;
      n[static_cast<std::size_t>(b)] = p + "ggd_alpha";
      n[static_cast<std::size_t>(b + 1)] = p + "ggd_sigma_sq";
      for (int o = 0; o < 4; ++o) {
        const std::string q = p + orient[o] + ".";
        const auto i = static_cast<std::size_t>(b + 2 + 4 * o);
        n[i] = q + "nu";
        n[i + 1] = q + "eta";
        n[i + 2] = q + "sigma_l_sq";
        n[i + 3] = q + "sigma_r_sq";
      }
    }
    return n;
  }();
  return names;
}

double ggd_moment_ratio(double alpha) {
  return std::exp(std::lgamma(1.0 / alpha) + std::lgamma(3.0 / alpha) - 2.0 * std::lgamma(2.0 / alpha));
}

Raster mscn_transform(const Raster& image) {
  if (image.width < kMinFrameSide || image.height < kMinFrameSide)
    throw ArgumentError("nr_features.mscn_transform: image smaller than 16x16");
  const int w = image.width;
  const int h = image.height;
  std::vector<double> sq(image.v.size());
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = image.v[i] * image.v[i];
  const auto mu = blur(image.v, w, h);
  const auto mu2 = blur(sq, w, h);
  Raster out{w, h, std::vector<double>(image.v.size())};
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    const double sigma = std::sqrt(std::max(0.0, mu2[i] - mu[i] * mu[i]));
    out.v[i] = (image.v[i] - mu[i]) / (sigma + 1.0);
  }
  return out;
}

Raster mscn_transform(const LumaFrame& frame) { return mscn_transform(to_raster(frame)); }

GgdFit fit_ggd(std::span<const double> samples) {
  if (samples.size() < kMinFitSamples)
    throw ArgumentError("nr_features.fit_ggd: need at least 100 samples, got " + std::to_string(samples.size()));
  double sum = 0, sum_abs = 0, sum_sq = 0;
  for (double x : samples) {
    sum += x;
    sum_abs += std::abs(x);
    sum_sq += x * x;
  }
  const double n = static_cast<double>(samples.size());
  const double mean = sum / n;
  const double second = sum_sq / n;
  const double mean_abs = sum_abs / n;
  const double variance = second - mean * mean;
  if (!(variance > 1e-12 * std::max(1.0, second)) || mean_abs == 0.0)
    throw DegenerateInputError("nr_features.fit_ggd: samples have zero variance");
  return {lookup_alpha(second / (mean_abs * mean_abs)), second};
}

AggdFit fit_aggd(std::span<const double> samples) {
  if (samples.size() < kMinFitSamples)
    throw ArgumentError("nr_features.fit_aggd: need at least 100 samples, got " + std::to_string(samples.size()));
  double neg_sq = 0, pos_sq = 0, sum_abs = 0, sum_sq = 0;
  std::size_t neg = 0, pos = 0;
  for (double x : samples) {
    if (x < 0) {
      neg_sq += x * x;
      ++neg;
    } else if (x > 0) {
      pos_sq += x * x;
      ++pos;
    }
    sum_abs += std::abs(x);
    sum_sq += x * x;
  }
  if (neg == 0 || pos == 0) throw DegenerateInputError("nr_features.fit_aggd: samples are all one sign");
  const double n = static_cast<double>(samples.size());
  const double sigma_l_sq = neg_sq / static_cast<double>(neg);
  const double sigma_r_sq = pos_sq / static_cast<double>(pos);
  const double sigma_l = std::sqrt(sigma_l_sq);
  const double sigma_r = std::sqrt(sigma_r_sq);
  const double gamma = sigma_l / sigma_r;
  const double r_hat = (sum_abs / n) * (sum_abs / n) / (sum_sq / n);
  const double big_r = r_hat * (gamma * gamma * gamma + 1) * (gamma + 1) / ((gamma * gamma + 1) * (gamma * gamma + 1));
  const double nu = lookup_alpha(1.0 / big_r);
  const double eta = (sigma_r - sigma_l) * std::exp(std::lgamma(2.0 / nu) - std::lgamma(1.0 / nu));
  return {nu, eta, sigma_l_sq, sigma_r_sq};
}

SpatialFeatures36 frame_features36(const LumaFrame& frame) {
  if (frame.width() < 2 * kMinFrameSide || frame.height() < 2 * kMinFrameSide)
    throw ArgumentError("nr_features.frame_features36: frame must be at least 32x32");
  SpatialFeatures36 f{};
  const Raster full = to_raster(frame);
  scale_features(full, f.data(), 0);
  scale_features(downsample2(full), f.data() + 18, 18);
  return f;
}

std::vector<SpatialFeatures36> clip_features36(const VideoClip& clip) {
  std::vector<SpatialFeatures36> out;
  out.reserve(clip.size());
  for (const auto& f : clip.frames) out.push_back(frame_features36(f));
  return out;
}

FrameContextFeatures context_features180(std::span<const SpatialFeatures36> per_frame, int n) {
  const int count = static_cast<int>(per_frame.size());
  if (n < 0 || n >= count)
    throw ArgumentError("nr_features.context_features180: frame index " + std::to_string(n) + " out of range [0, " +
                        std::to_string(count) + ")");
  FrameContextFeatures out{};
  for (int k = 0; k < kContextFrames; ++k) {
    const int idx = std::clamp(n - 2 + k, 0, count - 1);
    std::copy(per_frame[static_cast<std::size_t>(idx)].begin(), per_frame[static_cast<std::size_t>(idx)].end(),
              out.begin() + k * kSpatialFeatureCount);
  }
  return out;
}

FrameContextFeatures context_features180(const VideoClip& clip, int n) {
  if (n < 0 || n >= static_cast<int>(clip.size()))
    throw ArgumentError("nr_features.context_features180: frame index " + std::to_string(n) + " out of range");
  // Only the five frames in the window are needed.
  std::vector<SpatialFeatures36> window;
  const int count = static_cast<int>(clip.size());
  const int lo = std::max(0, n - 2);
  const int hi = std::min(count - 1, n + 2);
  for (int i = lo; i <= hi; ++i) window.push_back(frame_features36(clip.frames[static_cast<std::size_t>(i)]));
  FrameContextFeatures out{};
  for (int k = 0; k < kContextFrames; ++k) {
    const int idx = std::clamp(n - 2 + k, 0, count - 1) - lo;
    std::copy(window[static_cast<std::size_t>(idx)].begin(), window[static_cast<std::size_t>(idx)].end(),
              out.begin() + k * kSpatialFeatureCount);
  }
  return out;
}

}  // namespace mfqe

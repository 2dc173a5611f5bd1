#include "mfqe/degradation_sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "mfqe/errors.hpp"

namespace mfqe {
namespace {

// Float raster used while synthesizing, sampled with clamp-to-edge.
struct Plane {
  int w = 0;
  int h = 0;
  std::vector<double> v;

  double at(int x, int y) const {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return v[static_cast<std::size_t>(y) * w + x];
  }
  double bilinear(double x, double y) const {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const double ax = x - fx;
    const double ay = y - fy;
    return (1 - ay) * ((1 - ax) * at(x0, y0) + ax * at(x0 + 1, y0)) +
           ay * ((1 - ax) * at(x0, y0 + 1) + ax * at(x0 + 1, y0 + 1));
  }
};

double smoothstep(double t) { return t * t * (3 - 2 * t); }

// Multi-octave value noise plus a handful of hard-edged ellipses, scaled to [16, 240].
Plane make_texture(int w, int h, std::mt19937_64& rng) {
  Plane p{w, h, std::vector<double>(static_cast<std::size_t>(w) * h, 0.0)};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::array<int, 5> cells{32, 16, 8, 4, 2};
  const std::array<double, 5> amps{1.0, 0.7, 0.5, 0.35, 0.2};
  for (std::size_t o = 0; o < cells.size(); ++o) {
    const int c = cells[o];
    const int gw = w / c + 2;
    const int gh = h / c + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
    for (auto& l : lattice) l = unit(rng) - 0.5;
    for (int y = 0; y < h; ++y) {
      const int gy = y / c;
      const double ty = smoothstep(static_cast<double>(y % c) / c);
      for (int x = 0; x < w; ++x) {
        const int gx = x / c;
        const double tx = smoothstep(static_cast<double>(x % c) / c);
        const auto L = [&](int i, int j) { return lattice[static_cast<std::size_t>(j) * gw + i]; };
        const double top = (1 - tx) * L(gx, gy) + tx * L(gx + 1, gy);
        const double bot = (1 - tx) * L(gx, gy + 1) + tx * L(gx + 1, gy + 1);
        p.v[static_cast<std::size_t>(y) * w + x] += amps[o] * ((1 - ty) * top + ty * bot);
      }
    }
  }
  const int blobs = std::max(3, (w * h) / 2048);
  for (int b = 0; b < blobs; ++b) {
    const double cx = unit(rng) * w;
    const double cy = unit(rng) * h;
    const double rx = 3 + unit(rng) * 12;
    const double ry = 3 + unit(rng) * 12;
    const double level = (unit(rng) - 0.5) * 1.6;
    for (int y = std::max(0, static_cast<int>(cy - ry)); y < std::min(h, static_cast<int>(cy + ry) + 1); ++y)
      for (int x = std::max(0, static_cast<int>(cx - rx)); x < std::min(w, static_cast<int>(cx + rx) + 1); ++x) {
        const double dx = (x - cx) / rx;
        const double dy = (y - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) p.v[static_cast<std::size_t>(y) * w + x] = level;
      }
  }
  const auto [mn, mx] = std::minmax_element(p.v.begin(), p.v.end());
  const double lo = *mn;
  const double span = std::max(*mx - lo, 1e-9);
  for (auto& v : p.v) v = 16.0 + 224.0 * (v - lo) / span;
  return p;
}

struct Sprite {
  int x0, y0, w, h;
  double vx, vy;
  double level;
  int stripe;
};

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Orthonormal 8-point DCT-II basis, kDct[k][n].
const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> c{};
    for (int k = 0; k < 8; ++k)
      for (int n = 0; n < 8; ++n) {
        const double a = k == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8);
        c[k][n] = a * std::cos((2 * n + 1) * k * std::numbers::pi / 16);
      }
    return c;
  }();
  return basis;
}

}  // namespace

void SynthSpec::validate() const {
  if (width < kMinFrameSide || height < kMinFrameSide)
    throw ArgumentError("degradation_sim.synth_clip: frame size below minimum");
  if (frame_count < 5) throw ArgumentError("degradation_sim.synth_clip: frame_count must be >= 5");
  if (motion.size() != 1 && motion.size() != static_cast<std::size_t>(frame_count - 1))
    throw ArgumentError("degradation_sim.synth_clip: motion needs 1 or frame_count-1 entries");
  for (const auto& m : motion)
    if (std::abs(m.dx) > 8 || std::abs(m.dy) > 8 || !std::isfinite(m.dx) || !std::isfinite(m.dy))
      throw ArgumentError("degradation_sim.synth_clip: per-step motion exceeds 8 px");
  if (sprite_count < 0) throw ArgumentError("degradation_sim.synth_clip: negative sprite_count");
}

Displacement SynthSpec::step(int t) const {
  return motion.size() == 1 ? motion.front() : motion[static_cast<std::size_t>(t)];
}

Displacement SynthSpec::cumulative(int t) const {
  Displacement c;
  for (int i = 0; i < t; ++i) {
    c.dx += step(i).dx;
    c.dy += step(i).dy;
  }
  return c;
}

QualitySchedule QualitySchedule::triangular(int period, double base_qstep, double peak_qstep) {
  QualitySchedule s;
  s.period = period;
  s.base_qstep = base_qstep;
  s.peak_qstep = peak_qstep;
  s.profile.assign(static_cast<std::size_t>(std::max(period, 0)), 1.0);
  const double half = period / 2.0;
  for (int i = 0; i < period; ++i) {
    const double d = std::min(i, period - i) / half;
    s.profile[static_cast<std::size_t>(i)] = 1.0 + (peak_qstep / base_qstep - 1.0) * d;
  }
  s.validate();
  return s;
}

void QualitySchedule::validate() const {
  if (period < 2) throw ArgumentError("degradation_sim.QualitySchedule: period must be >= 2");
  if (!(base_qstep >= 1.0) || !(peak_qstep > base_qstep))
    throw ArgumentError("degradation_sim.QualitySchedule: need peak_qstep > base_qstep >= 1");
  if (profile.size() != static_cast<std::size_t>(period))
    throw ArgumentError("degradation_sim.QualitySchedule: profile length must equal period");
  for (double m : profile)
    if (!(m >= 1.0)) throw ArgumentError("degradation_sim.QualitySchedule: multipliers must be >= 1");
  const double top = *std::max_element(profile.begin(), profile.end());
  if (std::abs(base_qstep * top - peak_qstep) > 1e-6 * peak_qstep)
    throw ArgumentError("degradation_sim.QualitySchedule: peak_qstep must equal base_qstep * max(profile)");
}

VideoClip synth_clip(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.texture_seed);

  double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
  for (int t = 1; t < spec.frame_count; ++t) {
    const auto c = spec.cumulative(t);
    min_x = std::min(min_x, c.dx);
    max_x = std::max(max_x, c.dx);
    min_y = std::min(min_y, c.dy);
    max_y = std::max(max_y, c.dy);
  }
  // Texture covers every pixel any frame samples; edges replicate beyond that.
  const int left = static_cast<int>(std::ceil(max_x)) + 2;
  const int right = static_cast<int>(std::ceil(-min_x)) + 2;
  const int top = static_cast<int>(std::ceil(max_y)) + 2;
  const int bottom = static_cast<int>(std::ceil(-min_y)) + 2;
  const Plane tex = make_texture(spec.width + left + right, spec.height + top + bottom, rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Sprite> sprites;
  for (int i = 0; i < spec.sprite_count; ++i) {
    Sprite s{};
    s.w = 6 + static_cast<int>(unit(rng) * spec.width / 5.0);
    s.h = 6 + static_cast<int>(unit(rng) * spec.height / 5.0);
    s.x0 = static_cast<int>(unit(rng) * spec.width);
    s.y0 = static_cast<int>(unit(rng) * spec.height);
    s.vx = (unit(rng) - 0.5) * 4.0;
    s.vy = (unit(rng) - 0.5) * 4.0;
    s.level = 24 + unit(rng) * 208;
    s.stripe = 2 + static_cast<int>(unit(rng) * 4);
    sprites.push_back(s);
  }

  VideoClip clip;
  for (int t = 0; t < spec.frame_count; ++t) {
    const auto c = spec.cumulative(t);
    std::vector<std::uint8_t> px(static_cast<std::size_t>(spec.width) * spec.height);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x)
        px[static_cast<std::size_t>(y) * spec.width + x] =
            to_u8(tex.bilinear(x + left - c.dx, y + top - c.dy));
    for (const auto& s : sprites) {
      const int ox = static_cast<int>(std::lround(s.x0 + s.vx * t));
      const int oy = static_cast<int>(std::lround(s.y0 + s.vy * t));
      for (int j = 0; j < s.h; ++j)
        for (int i = 0; i < s.w; ++i) {
          const int x = ((ox + i) % spec.width + spec.width) % spec.width;
          const int y = ((oy + j) % spec.height + spec.height) % spec.height;
          const double shade = ((i / s.stripe) % 2 == 0) ? 0.0 : 28.0;
          px[static_cast<std::size_t>(y) * spec.width + x] = to_u8(s.level + shade - 14.0);
        }
    }
    clip.frames.emplace_back(spec.width, spec.height, std::move(px));
  }
  return clip;
}

LumaFrame degrade_frame(const LumaFrame& frame, double qstep) {
  if (frame.width() % 8 != 0 || frame.height() % 8 != 0)
    throw ArgumentError("degradation_sim.degrade_clip: dimensions " + std::to_string(frame.width()) +
                        "x" + std::to_string(frame.height()) + " are not multiples of 8");
  if (!(qstep > 0.0)) throw ArgumentError("degradation_sim.degrade_clip: qstep must be positive");
  const auto& C = dct_basis();
  LumaFrame out(frame.width(), frame.height());
  std::array<double, 64> blk{}, tmp{}, coef{};
  for (int by = 0; by < frame.height(); by += 8)
    for (int bx = 0; bx < frame.width(); bx += 8) {
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) blk[y * 8 + x] = frame.at(bx + x, by + y);
      // coef = C * blk * C^T
      for (int k = 0; k < 8; ++k)
        for (int x = 0; x < 8; ++x) {
          double s = 0;
          for (int n = 0; n < 8; ++n) s += C[k][n] * blk[n * 8 + x];
          tmp[k * 8 + x] = s;
        }
      for (int k = 0; k < 8; ++k)
        for (int l = 0; l < 8; ++l) {
          double s = 0;
          for (int n = 0; n < 8; ++n) s += tmp[k * 8 + n] * C[l][n];
          coef[k * 8 + l] = std::round(s / qstep) * qstep;
        }
      // blk = C^T * coef * C
      for (int n = 0; n < 8; ++n)
        for (int l = 0; l < 8; ++l) {
          double s = 0;
          for (int k = 0; k < 8; ++k) s += C[k][n] * coef[k * 8 + l];
          tmp[n * 8 + l] = s;
        }
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          double s = 0;
          for (int l = 0; l < 8; ++l) s += tmp[y * 8 + l] * C[l][x];
          out.at(bx + x, by + y) = to_u8(s);
        }
    }
  return out;
}

ClipPair degrade_clip(const VideoClip& raw, std::span<const double> qsteps) {
  raw.validate();
  if (qsteps.size() != raw.size())
    throw ArgumentError("degradation_sim.degrade_clip: need one qstep per frame");
  ClipPair pair{raw, raw};
  for (std::size_t t = 0; t < raw.size(); ++t) pair.compressed.frames[t] = degrade_frame(raw.frames[t], qsteps[t]);
  return pair;
}

ClipPair degrade_clip(const VideoClip& raw, const QualitySchedule& sched) {
  sched.validate();
  std::vector<double> q(raw.size());
  for (std::size_t t = 0; t < q.size(); ++t) q[t] = sched.qstep(t);
  return degrade_clip(raw, q);
}

}  // namespace mfqe

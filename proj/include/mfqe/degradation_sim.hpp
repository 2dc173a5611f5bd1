#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mfqe/video_io.hpp"

namespace mfqe {

struct Displacement {
  double dx = 0.0;
  double dy = 0.0;
};

/// Synthetic clip description: a fixed smooth-noise texture panned by a global
/// motion, with independently moving rectangular sprites on top.
struct SynthSpec {
  int width = 128;
  int height = 128;
  int frame_count = 32;
  // Per-step displacement from frame t to t+1. Either frame_count-1 entries
  // or a single entry applied to every step.
  std::vector<Displacement> motion{Displacement{}};
  std::uint64_t texture_seed = 1;
  int sprite_count = 0;

  void validate() const;
  Displacement step(int t) const;
  /// Sum of the first t steps; frame t shows frame 0 shifted by this amount.
  Displacement cumulative(int t) const;
};

/// Quantization step for frame t is base_qstep * profile[t % period].
struct QualitySchedule {
  int period = 4;
  double base_qstep = 8.0;
  double peak_qstep = 20.8;
  std::vector<double> profile{1.0, 1.8, 2.6, 1.8};

  /// Triangular profile rising from base at position 0 to peak at period/2.
  static QualitySchedule triangular(int period, double base_qstep, double peak_qstep);

  void validate() const;
  double qstep(std::size_t t) const { return base_qstep * profile[t % static_cast<std::size_t>(period)]; }
};

VideoClip synth_clip(const SynthSpec& spec);

/// 8x8 orthonormal DCT-II, uniform scalar quantization with step qstep, inverse DCT, clamp.
LumaFrame degrade_frame(const LumaFrame& frame, double qstep);
ClipPair degrade_clip(const VideoClip& raw, const QualitySchedule& sched);
/// Same as above with an explicit per-frame step list (qsteps.size() == raw.size()).
ClipPair degrade_clip(const VideoClip& raw, std::span<const double> qsteps);

}  // namespace mfqe

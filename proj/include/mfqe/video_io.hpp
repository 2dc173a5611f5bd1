#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mfqe {

inline constexpr int kMinFrameSide = 16;

/// 8-bit luma raster, row-major.
class LumaFrame {
 public:
  LumaFrame() = default;
  /// Zero-filled frame. Throws ArgumentError if a side is below kMinFrameSide.
  LumaFrame(int width, int height, std::uint8_t fill = 0);
  LumaFrame(int width, int height, std::vector<std::uint8_t> samples);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return samples_.size(); }

  std::uint8_t at(int x, int y) const { return samples_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t& at(int x, int y) { return samples_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<const std::uint8_t> samples() const noexcept { return samples_; }
  std::span<std::uint8_t> samples() noexcept { return samples_; }

  bool same_dims(const LumaFrame& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_;
  }
  friend bool operator==(const LumaFrame&, const LumaFrame&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> samples_;
};

struct Rational {
  int num = 25;
  int den = 1;
  friend bool operator==(const Rational&, const Rational&) = default;
};

/// Ordered frames sharing one size. Chroma is opaque: either empty (no payload
/// for any frame) or one U+V byte blob per frame.
struct VideoClip {
  std::vector<LumaFrame> frames;
  std::vector<std::vector<std::uint8_t>> chroma;
  Rational frame_rate;
  // Y4M header tokens other than W/H/F (interlacing, aspect, colorspace, X-tags),
  // kept verbatim so a read/write cycle reproduces them.
  std::vector<std::string> extra_tokens;

  bool empty() const noexcept { return frames.empty(); }
  std::size_t size() const noexcept { return frames.size(); }
  int width() const { return frames.empty() ? 0 : frames.front().width(); }
  int height() const { return frames.empty() ? 0 : frames.front().height(); }
  bool has_chroma() const noexcept { return !chroma.empty(); }

  /// Throws ArgumentError on mixed frame sizes or a chroma/frame count mismatch.
  void validate() const;

  friend bool operator==(const VideoClip&, const VideoClip&) = default;
};

struct ClipPair {
  VideoClip raw;
  VideoClip compressed;

  /// Throws ArgumentError unless frame counts and dimensions agree.
  void validate() const;
};

/// Bytes of the two 4:2:0 chroma planes for a frame of the given luma size.
std::size_t chroma_bytes_420(int width, int height);

VideoClip read_y4m(std::span<const std::uint8_t> bytes);
VideoClip read_y4m(std::istream& in);
void write_y4m(const VideoClip& clip, std::ostream& out);
std::vector<std::uint8_t> write_y4m(const VideoClip& clip);

VideoClip read_raw_yuv420(std::span<const std::uint8_t> bytes, int width, int height);
void write_raw_yuv420(const VideoClip& clip, std::ostream& out);

VideoClip read_y4m_file(const std::filesystem::path& path);
void write_y4m_file(const VideoClip& clip, const std::filesystem::path& path);
VideoClip read_raw_yuv420_file(const std::filesystem::path& path, int width, int height);

}  // namespace mfqe

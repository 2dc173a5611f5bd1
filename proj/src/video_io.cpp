#include "mfqe/video_io.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string_view>

#include "mfqe/errors.hpp"

namespace mfqe {
namespace {

constexpr std::string_view kSignature = "YUV4MPEG2";
constexpr std::string_view kFrameTag = "FRAME";
constexpr std::size_t kMaxLine = 4096;
constexpr int kMaxSide = 16384;

void check_dims(int width, int height, const char* where) {
  if (width < kMinFrameSide || height < kMinFrameSide) {
    throw ArgumentError(std::string(where) + ": frame dimensions " + std::to_string(width) + "x" +
                        std::to_string(height) + " below minimum " +
                        std::to_string(kMinFrameSide));
  }
}

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split_tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    std::size_t end = line.find(' ', pos);
    if (end == std::string_view::npos) end = line.size();
    if (end > pos) out.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

bool is_supported_colorspace(std::string_view c) {
  return c == "C420" || c == "C420jpeg" || c == "C420mpeg2" || c == "C420paldv";
}

// Returns the line (without '\n') starting at pos and advances pos past the newline.
std::string_view take_line(std::span<const std::uint8_t> bytes, std::size_t& pos,
                           std::size_t frame_index, bool is_header) {
  const auto* begin = reinterpret_cast<const char*>(bytes.data()) + pos;
  std::size_t avail = bytes.size() - pos;
  std::size_t limit = std::min(avail, kMaxLine);
  const void* nl = std::memchr(begin, '\n', limit);
  if (nl == nullptr) {
    if (is_header) throw FormatError("video_io.read_y4m: header line is not newline-terminated");
    if (avail < kMaxLine)
      throw TruncationError("video_io.read_y4m: FRAME marker truncated at frame " +
                                std::to_string(frame_index),
                            frame_index);
    throw FormatError("video_io.read_y4m: FRAME line too long at frame " +
                      std::to_string(frame_index));
  }
  std::size_t len = static_cast<const char*>(nl) - begin;
  pos += len + 1;
  return {begin, len};
}

}  // namespace

LumaFrame::LumaFrame(int width, int height, std::uint8_t fill)
    : width_(width), height_(height) {
  check_dims(width, height, "video_io.LumaFrame");
  samples_.assign(static_cast<std::size_t>(width) * height, fill);
}

LumaFrame::LumaFrame(int width, int height, std::vector<std::uint8_t> samples)
    : width_(width), height_(height), samples_(std::move(samples)) {
  check_dims(width, height, "video_io.LumaFrame");
  if (samples_.size() != static_cast<std::size_t>(width) * height)
    throw ArgumentError("video_io.LumaFrame: sample count " + std::to_string(samples_.size()) +
                        " != width*height");
}

void VideoClip::validate() const {
  for (const auto& f : frames) {
    if (!f.same_dims(frames.front()))
      throw ArgumentError("video_io.VideoClip: frames have differing dimensions");
  }
  if (!chroma.empty()) {
    if (chroma.size() != frames.size())
      throw ArgumentError("video_io.VideoClip: chroma payload count != frame count");
    const std::size_t expect = chroma_bytes_420(width(), height());
    for (const auto& c : chroma)
      if (c.size() != expect) throw ArgumentError("video_io.VideoClip: chroma payload size");
  }
  if (frame_rate.num <= 0 || frame_rate.den <= 0)
    throw ArgumentError("video_io.VideoClip: frame rate must be positive");
}

void ClipPair::validate() const {
  raw.validate();
  compressed.validate();
  if (raw.size() != compressed.size())
    throw ArgumentError("video_io.ClipPair: raw has " + std::to_string(raw.size()) +
                        " frames, compressed has " + std::to_string(compressed.size()));
  if (!raw.empty() && (raw.width() != compressed.width() || raw.height() != compressed.height()))
    throw ArgumentError("video_io.ClipPair: raw and compressed dimensions differ");
}

std::size_t chroma_bytes_420(int width, int height) {
  return 2 * static_cast<std::size_t>((width + 1) / 2) * static_cast<std::size_t>((height + 1) / 2);
}

VideoClip read_y4m(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  if (bytes.size() < kSignature.size() ||
      std::string_view(reinterpret_cast<const char*>(bytes.data()), kSignature.size()) != kSignature)
    throw FormatError("video_io.read_y4m: missing YUV4MPEG2 signature");
  const std::string_view header = take_line(bytes, pos, 0, true);
  const auto tokens = split_tokens(header);
  if (tokens.empty() || tokens.front() != kSignature)
    throw FormatError("video_io.read_y4m: malformed signature token");

  VideoClip clip;
  int width = -1;
  int height = -1;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const std::string_view tok = tokens[i];
    const std::string_view val = tok.substr(1);
    auto bad = [&] {
      return FormatError("video_io.read_y4m: malformed header token '" + std::string(tok) + "'");
    };
    switch (tok.front()) {
      case 'W':
        if (!parse_int(val, width) || width < kMinFrameSide || width > kMaxSide) throw bad();
        break;
      case 'H':
        if (!parse_int(val, height) || height < kMinFrameSide || height > kMaxSide) throw bad();
        break;
      case 'F': {
        const auto colon = val.find(':');
        if (colon == std::string_view::npos || !parse_int(val.substr(0, colon), clip.frame_rate.num) ||
            !parse_int(val.substr(colon + 1), clip.frame_rate.den) || clip.frame_rate.num <= 0 ||
            clip.frame_rate.den <= 0)
          throw bad();
        break;
      }
      case 'C':
        if (!is_supported_colorspace(tok)) throw bad();
        clip.extra_tokens.emplace_back(tok);
        break;
      case 'I':
      case 'A':
      case 'X':
        if (val.empty()) throw bad();
        clip.extra_tokens.emplace_back(tok);
        break;
      default:
        throw bad();
    }
  }
  if (width < 0) throw FormatError("video_io.read_y4m: header lacks W token");
  if (height < 0) throw FormatError("video_io.read_y4m: header lacks H token");

  const std::size_t luma = static_cast<std::size_t>(width) * height;
  const std::size_t chroma = chroma_bytes_420(width, height);
  while (pos < bytes.size()) {
    const std::size_t index = clip.frames.size();
    const std::string_view line = take_line(bytes, pos, index, false);
    if (line.substr(0, kFrameTag.size()) != kFrameTag ||
        (line.size() > kFrameTag.size() && line[kFrameTag.size()] != ' '))
      throw FormatError("video_io.read_y4m: expected FRAME marker at frame " + std::to_string(index));
    if (bytes.size() - pos < luma + chroma)
      throw TruncationError("video_io.read_y4m: frame payload truncated at frame " +
                                std::to_string(index),
                            index);
    const auto* p = bytes.data() + pos;
    clip.frames.emplace_back(width, height, std::vector<std::uint8_t>(p, p + luma));
    clip.chroma.emplace_back(p + luma, p + luma + chroma);
    pos += luma + chroma;
  }
  return clip;
}

VideoClip read_y4m(std::istream& in) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_y4m(bytes);
}

void write_y4m(const VideoClip& clip, std::ostream& out) {
  if (clip.empty()) throw ArgumentError("video_io.write_y4m: clip has no frames");
  clip.validate();
  std::size_t written = 0;
  auto emit = [&](const char* data, std::size_t n) {
    out.write(data, static_cast<std::streamsize>(n));
    if (!out)
      throw IoError("video_io.write_y4m: sink failed after " + std::to_string(written) + " bytes",
                    written);
    written += n;
  };

  std::ostringstream header;
  header << kSignature << " W" << clip.width() << " H" << clip.height() << " F" << clip.frame_rate.num
         << ':' << clip.frame_rate.den;
  for (const auto& t : clip.extra_tokens) header << ' ' << t;
  header << '\n';
  const std::string h = header.str();
  emit(h.data(), h.size());

  const std::vector<std::uint8_t> neutral(chroma_bytes_420(clip.width(), clip.height()), 128);
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    emit("FRAME\n", 6);
    const auto s = clip.frames[i].samples();
    emit(reinterpret_cast<const char*>(s.data()), s.size());
    const auto& c = clip.has_chroma() ? clip.chroma[i] : neutral;
    emit(reinterpret_cast<const char*>(c.data()), c.size());
  }
}

std::vector<std::uint8_t> write_y4m(const VideoClip& clip) {
  std::ostringstream os(std::ios::binary);
  write_y4m(clip, os);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

VideoClip read_raw_yuv420(std::span<const std::uint8_t> bytes, int width, int height) {
  if (width <= 0 || height <= 0 || width % 2 != 0 || height % 2 != 0)
    throw ArgumentError("video_io.read_raw_yuv420: dimensions must be positive and even, got " +
                        std::to_string(width) + "x" + std::to_string(height));
  check_dims(width, height, "video_io.read_raw_yuv420");
  const std::size_t luma = static_cast<std::size_t>(width) * height;
  const std::size_t frame = luma + luma / 2;
  if (bytes.size() % frame != 0)
    throw TruncationError("video_io.read_raw_yuv420: stream length " + std::to_string(bytes.size()) +
                              " is not a multiple of the frame size " + std::to_string(frame),
                          bytes.size() / frame);
  VideoClip clip;
  for (std::size_t off = 0; off < bytes.size(); off += frame) {
    const auto* p = bytes.data() + off;
    clip.frames.emplace_back(width, height, std::vector<std::uint8_t>(p, p + luma));
    clip.chroma.emplace_back(p + luma, p + frame);
  }
  return clip;
}

void write_raw_yuv420(const VideoClip& clip, std::ostream& out) {
  clip.validate();
  const std::vector<std::uint8_t> neutral(chroma_bytes_420(clip.width(), clip.height()), 128);
  std::size_t written = 0;
  for (std::size_t i = 0; i < clip.size(); ++i) {
    const auto s = clip.frames[i].samples();
    const auto& c = clip.has_chroma() ? clip.chroma[i] : neutral;
    out.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size()));
    out.write(reinterpret_cast<const char*>(c.data()), static_cast<std::streamsize>(c.size()));
    if (!out) throw IoError("video_io.write_raw_yuv420: sink failed", written);
    written += s.size() + c.size();
  }
}

VideoClip read_y4m_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("video_io.read_y4m: cannot open " + path.string());
  return read_y4m(in);
}

void write_y4m_file(const VideoClip& clip, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("video_io.write_y4m: cannot open " + path.string());
  write_y4m(clip, out);
}

VideoClip read_raw_yuv420_file(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("video_io.read_raw_yuv420: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_raw_yuv420(bytes, width, height);
}

}  // namespace mfqe

#include <random>
#include <sstream>
#include <string>

#include "doctest.h"
#include "mfqe/errors.hpp"
#include "mfqe/video_io.hpp"

using namespace mfqe;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::string y4m_stream(const std::string& header, int w, int h, int frames, std::size_t short_last = 0) {
  std::string s = header + "\n";
  const std::size_t payload = static_cast<std::size_t>(w) * h + chroma_bytes_420(w, h);
  for (int f = 0; f < frames; ++f) {
    s += "FRAME\n";
    std::size_t n = payload - ((f == frames - 1) ? short_last : 0);
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>((i * 7 + f) & 0xff));
  }
  return s;
}

VideoClip random_clip(std::mt19937& rng) {
  std::uniform_int_distribution<int> dim(8, 20), count(1, 4), byte(0, 255);
  VideoClip c;
  const int w = dim(rng) * 2;
  const int h = dim(rng) * 2 + 1;  // odd heights exercise chroma rounding
  c.frame_rate = {count(rng) * 15, count(rng)};
  if (rng() % 2) c.extra_tokens = {"Ip", "A1:1", "C420mpeg2"};
  const int n = count(rng);
  for (int f = 0; f < n; ++f) {
    std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h);
    for (auto& p : px) p = static_cast<std::uint8_t>(byte(rng));
    c.frames.emplace_back(w, h, std::move(px));
    std::vector<std::uint8_t> ch(chroma_bytes_420(w, h));
    for (auto& p : ch) p = static_cast<std::uint8_t>(byte(rng));
    c.chroma.push_back(std::move(ch));
  }
  return c;
}

}  // namespace

TEST_CASE("read_y4m parses header tokens") {
  const auto s = y4m_stream("YUV4MPEG2 W16 H16 F30:1 Ip A1:1 C420jpeg", 16, 16, 2);
  const auto clip = read_y4m(bytes_of(s));
  CHECK(clip.size() == 2);
  CHECK(clip.width() == 16);
  CHECK(clip.height() == 16);
  CHECK(clip.frame_rate == Rational{30, 1});
  CHECK(clip.chroma.size() == 2);
  CHECK(clip.chroma[0].size() == 128);
}

TEST_CASE("read_y4m defaults frame rate to 25:1") {
  const auto clip = read_y4m(bytes_of(y4m_stream("YUV4MPEG2 W16 H16", 16, 16, 1)));
  CHECK(clip.frame_rate == Rational{25, 1});
}

TEST_CASE("read_y4m reports truncation with the frame index") {
  const auto s = y4m_stream("YUV4MPEG2 W16 H16 F30:1", 16, 16, 2, 1);
  try {
    read_y4m(bytes_of(s));
    FAIL("expected truncation");
  } catch (const TruncationError& e) {
    CHECK(e.frame_index() == 1);
  }
}

TEST_CASE("read_y4m names the malformed token") {
  const auto bad_w = y4m_stream("YUV4MPEG2 Wabc H16", 16, 16, 1);
  try {
    read_y4m(bytes_of(bad_w));
    FAIL("expected format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("Wabc") != std::string::npos);
  }
  CHECK_THROWS_AS(read_y4m(bytes_of(y4m_stream("YUV4MPEG2 W16 H16 C444", 16, 16, 1))), FormatError);
  CHECK_THROWS_AS(read_y4m(bytes_of(y4m_stream("YUV4MPEG2 H16", 16, 16, 1))), FormatError);
  CHECK_THROWS_AS(read_y4m(bytes_of(y4m_stream("YUV4MPEG2 W16 H16 F30", 16, 16, 1))), FormatError);
  CHECK_THROWS_AS(read_y4m(bytes_of("MPEG W16 H16\n")), FormatError);
}

TEST_CASE("interlacing tokens are accepted and frames read as progressive") {
  const auto clip = read_y4m(bytes_of(y4m_stream("YUV4MPEG2 W16 H16 It", 16, 16, 1)));
  CHECK(clip.size() == 1);
}

TEST_CASE("write_y4m header and neutral chroma") {
  VideoClip c;
  c.frame_rate = {30, 1};
  c.frames.emplace_back(16, 16, std::uint8_t{77});
  const auto out = write_y4m(c);
  const std::string s(out.begin(), out.end());
  CHECK(s.rfind("YUV4MPEG2 W16 H16 F30:1", 0) == 0);
  const auto back = read_y4m(out);
  for (auto v : back.chroma[0]) REQUIRE(v == 128);
  CHECK(write_y4m(c) == out);
}

TEST_CASE("write_y4m propagates sink failure") {
  VideoClip c;
  c.frames.emplace_back(16, 16, std::uint8_t{1});
  std::ostringstream os;
  os.setstate(std::ios::badbit);
  CHECK_THROWS_AS(write_y4m(c, os), IoError);
}

TEST_CASE("read_raw_yuv420") {
  std::vector<std::uint8_t> two(2 * 384, 9);
  CHECK(read_raw_yuv420(two, 16, 16).size() == 2);
  std::vector<std::uint8_t> hundred(100, 0);
  CHECK_THROWS_AS(read_raw_yuv420(hundred, 16, 16), TruncationError);
  CHECK(read_raw_yuv420({}, 16, 16).empty());
  CHECK_THROWS_AS(read_raw_yuv420(two, 17, 16), ArgumentError);
}

TEST_CASE("property: read_y4m(write_y4m(clip)) reproduces the clip") {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const auto clip = random_clip(rng);
    const auto bytes = write_y4m(clip);
    const auto back = read_y4m(bytes);
    REQUIRE(back == clip);
    REQUIRE(write_y4m(back) == bytes);
  }
}

TEST_CASE("property: raw yuv420 round trip keeps luma") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto clip = random_clip(rng);
    if (clip.height() % 2) continue;
    std::ostringstream os;
    write_raw_yuv420(clip, os);
    const std::string s = os.str();
    const auto back = read_raw_yuv420(std::vector<std::uint8_t>(s.begin(), s.end()), clip.width(), clip.height());
    REQUIRE(back.frames == clip.frames);
    REQUIRE(back.chroma == clip.chroma);
  }
}

TEST_CASE("fuzz: arbitrary bytes only ever raise library errors") {
  std::mt19937 rng(1234);
  VideoClip base;
  base.frames.emplace_back(16, 16, std::uint8_t{3});
  base.frames.emplace_back(16, 16, std::uint8_t{4});
  const auto valid = write_y4m(base);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int trial = 0; trial < 3000; ++trial) {
    std::vector<std::uint8_t> b;
    if (trial % 2 == 0) {
      b = valid;
      const int edits = 1 + static_cast<int>(rng() % 4);
      for (int e = 0; e < edits; ++e) b[rng() % b.size()] = static_cast<std::uint8_t>(byte(rng));
      if (rng() % 3 == 0) b.resize(rng() % b.size());
    } else {
      b.resize(rng() % 200);
      for (auto& v : b) v = static_cast<std::uint8_t>(byte(rng));
      const std::string sig = "YUV4MPEG2 W16 H16\n";
      if (rng() % 2 && b.size() >= sig.size()) std::copy(sig.begin(), sig.end(), b.begin());
    }
    try {
      const auto clip = read_y4m(b);
      for (const auto& f : clip.frames) REQUIRE(f.size() == static_cast<std::size_t>(f.width()) * f.height());
    } catch (const Error&) {
    }
  }
}

#include <algorithm>
#include <random>

#include "doctest.h"
#include "mfqe/degradation_sim.hpp"
#include "mfqe/errors.hpp"
#include "mfqe/pqf_detector.hpp"

using namespace mfqe;

namespace {

ClipPair sim_pair(int frames, std::uint64_t seed) {
  SynthSpec s;
  s.width = 64;
  s.height = 64;
  s.frame_count = frames;
  s.motion = {{0.5, 0.25}};
  s.texture_seed = seed;
  s.sprite_count = 2;
  return degrade_clip(synth_clip(s), QualitySchedule{});
}

}  // namespace

TEST_CASE("refine_labels examples") {
  DetectorConfig cfg;
  CHECK(refine_labels(std::vector<int>{0, 1, 1, 0}, std::vector<double>{0.2, 0.6, 0.9, 0.1}, cfg) ==
        std::vector<int>{0, 0, 1, 0});

  std::vector<int> l{1, 0, 0, 0, 0, 0, 0, 0, 1};
  std::vector<double> p{0.9, 0.1, 0.1, 0.2, 0.1, 0.4, 0.1, 0.1, 0.9};
  const auto out = refine_labels(l, p, cfg);
  CHECK(out == std::vector<int>{1, 0, 0, 0, 0, 1, 0, 0, 1});

  std::vector<int> ok{0, 1, 0, 0, 1, 0, 1, 0};
  std::vector<double> q(ok.size(), 0.3);
  CHECK(refine_labels(ok, q, cfg) == ok);
}

TEST_CASE("refine_labels ties and edges") {
  DetectorConfig cfg;
  CHECK(refine_labels(std::vector<int>{1, 1, 1}, std::vector<double>{0.7, 0.7, 0.7}, cfg) ==
        std::vector<int>{1, 0, 0});
  // Leading run of 8 zeros bounded by a virtual PQF at -1.
  std::vector<int> l(9, 0);
  l[8] = 1;
  std::vector<double> p(9, 0.1);
  p[0] = 0.99;  // run endpoint, not eligible
  p[3] = 0.5;
  const auto out = refine_labels(l, p, cfg);
  CHECK(out == std::vector<int>{0, 0, 0, 1, 0, 0, 0, 0, 1});
  // A run longer than 2D needs several insertions.
  std::vector<int> z(20, 0);
  std::vector<double> pz(20, 0.2);
  const auto many = refine_labels(z, pz, cfg);
  int run = 0;
  for (int v : many) {
    run = v ? 0 : run + 1;
    CHECK(run <= cfg.d_max);
  }
  CHECK_THROWS_AS(refine_labels(std::vector<int>{0, 1}, std::vector<double>{0.5}, cfg), ArgumentError);
}

TEST_CASE("property: refinement invariants on random sequences") {
  std::mt19937 rng(99);
  DetectorConfig cfg;
  for (int trial = 0; trial < 5000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 40);
    std::vector<int> l(static_cast<std::size_t>(n));
    std::vector<double> p(static_cast<std::size_t>(n));
    const double density = std::uniform_real_distribution<double>(0, 1)(rng);
    for (int i = 0; i < n; ++i) {
      l[static_cast<std::size_t>(i)] = std::uniform_real_distribution<double>(0, 1)(rng) < density;
      p[static_cast<std::size_t>(i)] = std::uniform_real_distribution<double>(0.001, 0.999)(rng);
    }
    const auto out = refine_labels(l, p, cfg);
    int run = 0;
    for (int i = 0; i < n; ++i) {
      if (i > 0) REQUIRE(!(out[static_cast<std::size_t>(i)] && out[static_cast<std::size_t>(i - 1)]));
      run = out[static_cast<std::size_t>(i)] ? 0 : run + 1;
      REQUIRE(run <= cfg.d_max);
    }
    REQUIRE(refine_labels(out, p, cfg) == out);
    // Only runs that break a rule change: input PQF runs of length >= 2 shrink to
    // their most probable member, then frames are added only inside non-PQF runs
    // longer than D.
    std::vector<int> mid = l;
    for (int i = 0; i < n;) {
      int j = i;
      while (l[static_cast<std::size_t>(i)] && j + 1 < n && l[static_cast<std::size_t>(j + 1)]) ++j;
      if (j > i) {
        const auto first = p.begin() + i;
        const auto best = static_cast<int>(std::max_element(first, p.begin() + j + 1) - p.begin());
        for (int k = i; k <= j; ++k) mid[static_cast<std::size_t>(k)] = k == best;
      }
      i = j + 1;
    }
    for (int i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      REQUIRE(out[u] >= mid[u]);
      if (out[u] == mid[u]) continue;
      int lo = i, hi = i;
      while (lo > 0 && !mid[static_cast<std::size_t>(lo - 1)]) --lo;
      while (hi + 1 < n && !mid[static_cast<std::size_t>(hi + 1)]) ++hi;
      REQUIRE(hi - lo + 1 > cfg.d_max);
    }
  }
}

TEST_CASE("evaluate") {
  const std::vector<int> truth{0, 1, 0, 1, 0, 0};
  auto m = evaluate(truth, truth);
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.f1 == 1.0);
  m = evaluate(std::vector<int>(6, 0), truth);
  CHECK(m.precision == 0.0);
  CHECK(m.recall == 0.0);
  CHECK(m.f1 == 0.0);
  const std::vector<int> balanced{0, 1, 0, 1}, complement{1, 0, 1, 0};
  CHECK(evaluate(complement, balanced).precision == 0.0);
  CHECK_THROWS_AS(evaluate(truth, balanced), ArgumentError);
}

TEST_CASE("build_training_set") {
  const auto pair = sim_pair(22, 4);
  const auto d = build_training_set(std::span<const ClipPair>(&pair, 1));
  CHECK(d.size() == 22);
  CHECK(d.dims() == 180);
  int pos = 0;
  for (int y : d.y) pos += y;
  CHECK(pos >= (22 - 2) / 4 - 1);
  CHECK(pos <= (22 - 2) / 4 + 1);

  const ClipPair same{pair.raw, pair.raw};
  const auto z = build_training_set(std::span<const ClipPair>(&same, 1));
  for (int y : z.y) CHECK(y == 0);
}

TEST_CASE("detect output invariants") {
  std::vector<ClipPair> train{sim_pair(24, 10), sim_pair(24, 11)};
  const auto model = svm::train(build_training_set(train), {});
  const auto test = sim_pair(26, 12);
  DetectorConfig cfg;
  const auto r = detect(test.compressed, model, cfg);
  CHECK(r.labels.size() == 26);
  CHECK(r.probs.size() == 26);
  CHECK(r.refined);
  int run = 0;
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    if (i > 0) CHECK(!(r.labels[i] && r.labels[i - 1]));
    run = r.labels[i] ? 0 : run + 1;
    CHECK(run <= cfg.d_max);
    CHECK(r.probs[i] > 0.0);
    CHECK(r.probs[i] < 1.0);
  }
  CHECK(evaluate(r.labels, true_pqf_labels(test)).f1 > 0.5);
  VideoClip tiny;
  tiny.frames = {test.compressed.frames[0], test.compressed.frames[1]};
  CHECK_THROWS_AS(detect(tiny, model, cfg), ArgumentError);
}

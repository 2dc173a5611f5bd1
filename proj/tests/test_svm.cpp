#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "mfqe/errors.hpp"
#include "mfqe/svm.hpp"

using namespace mfqe;

namespace {

svm::Dataset separable_pair() {
  svm::Dataset d;
  d.add(std::vector<double>{-1.0}, 0);
  d.add(std::vector<double>{1.0}, 1);
  return d;
}

svm::Dataset blobs(std::uint64_t seed, int per_class, double sep) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  svm::Dataset d;
  for (int i = 0; i < per_class; ++i) {
    d.add(std::vector<double>{sep + n(rng), sep + n(rng)}, 1);
    d.add(std::vector<double>{-sep + n(rng), -sep + n(rng)}, 0);
  }
  return d;
}

svm::Dataset noisy_blobs(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  svm::Dataset d;
  for (int i = 0; i < 60; ++i) {
    const int label = static_cast<int>(rng() % 2);
    const double c = label ? 0.8 : -0.8;
    d.add(std::vector<double>{c + n(rng), c + n(rng), n(rng)}, label);
  }
  return d;
}

}  // namespace

TEST_CASE("separable pair") {
  const auto d = separable_pair();
  const auto m = svm::train(d, {});
  CHECK(svm::decision_value(m, std::vector<double>{1.0}) > 0);
  CHECK(svm::decision_value(m, std::vector<double>{-1.0}) < 0);
  CHECK(std::abs(svm::decision_value(m, std::vector<double>{0.0})) < 1e-6);
  double prev = -1e300;
  for (int k = 0; k <= 20; ++k) {
    const double f = svm::decision_value(m, std::vector<double>{-1.0 + 0.1 * k});
    CHECK(f >= prev);
    prev = f;
  }
  CHECK(svm::predict_prob(m, std::vector<double>{1.0}) > 0.5);
  CHECK(svm::predict_prob(m, std::vector<double>{-1.0}) < 0.5);
  CHECK(m.platt_a < 0);
}

TEST_CASE("RBF kernel separates XOR where no line can") {
  svm::Dataset d;
  d.add(std::vector<double>{0, 0}, 0);
  d.add(std::vector<double>{1, 1}, 0);
  d.add(std::vector<double>{0, 1}, 1);
  d.add(std::vector<double>{1, 0}, 1);
  svm::TrainConfig cfg;
  cfg.gamma = 1.0;
  cfg.c = 10.0;
  const auto m = svm::train(d, cfg);
  for (std::size_t i = 0; i < d.size(); ++i)
    CHECK((svm::decision_value(m, d.x[i]) > 0) == (d.y[i] == 1));

  // Linear oracle: no (direction, offset) classifies all four points.
  int best = 0;
  for (int a = 0; a < 360; ++a) {
    const double wx = std::cos(a * std::numbers::pi / 180), wy = std::sin(a * std::numbers::pi / 180);
    for (int b = -300; b <= 300; ++b) {
      int ok = 0;
      for (std::size_t i = 0; i < d.size(); ++i)
        ok += ((wx * d.x[i][0] + wy * d.x[i][1] + b / 100.0 > 0) == (d.y[i] == 1));
      best = std::max(best, ok);
    }
  }
  CHECK(best == 3);
}

TEST_CASE("duplicated data gives the same classifier") {
  const auto d = blobs(3, 15, 1.5);
  auto dd = d;
  for (std::size_t i = 0; i < d.size(); ++i) dd.add(d.x[i], d.y[i]);
  svm::TrainConfig cfg;
  cfg.c = 100.0;
  const auto a = svm::train(d, cfg);
  const auto b = svm::train(dd, cfg);
  for (int i = -10; i <= 10; ++i)
    for (int j = -10; j <= 10; ++j) {
      const std::vector<double> x{i * 0.3, j * 0.3};
      const double fa = svm::decision_value(a, x);
      const double fb = svm::decision_value(b, x);
      CHECK(std::abs(fa - fb) < 5e-3);
      if (std::abs(fa) > 5e-3) CHECK((fa > 0) == (fb > 0));
    }
}

TEST_CASE("KKT conditions and dual ascent") {
  const auto d = noisy_blobs(9);
  svm::TrainConfig cfg;
  cfg.record_objective = true;
  svm::TrainInfo info;
  const auto m = svm::train(d, cfg, &info);
  REQUIRE(info.converged);
  CHECK(m.converged);
  for (std::size_t i = 1; i < info.dual_objective.size(); ++i)
    CHECK(info.dual_objective[i] >= info.dual_objective[i - 1] - 1e-12);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double yf = (d.y[i] == 1 ? 1.0 : -1.0) * svm::decision_value(m, d.x[i]);
    const double a = info.alphas[i];
    if (a <= 0) CHECK(yf >= 1 - 2 * cfg.kkt_tol);
    else if (a >= cfg.c) CHECK(yf <= 1 + 2 * cfg.kkt_tol);
    else CHECK(std::abs(yf - 1) <= 2 * cfg.kkt_tol);
  }
  for (double c : m.dual_coefs) CHECK(std::abs(c) <= cfg.c + 1e-12);
}

TEST_CASE("prediction does not depend on sample order") {
  const auto d = noisy_blobs(21);
  svm::Dataset shuffled;
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), std::mt19937(4));
  for (auto i : idx) shuffled.add(d.x[i], d.y[i]);
  const auto a = svm::train(d, {});
  const auto b = svm::train(shuffled, {});
  for (int k = 0; k < 30; ++k) {
    const std::vector<double> x{std::sin(k * 1.0), std::cos(k * 0.7), 0.1 * k - 1.5};
    CHECK(std::abs(svm::decision_value(a, x) - svm::decision_value(b, x)) < 1e-2);
  }
}

TEST_CASE("probabilities") {
  const auto d = noisy_blobs(5);
  const auto m = svm::train(d, {});
  CHECK(m.platt_a < 0);
  for (int k = -20; k <= 20; ++k) {
    const double p = svm::platt_prob(m, k * 0.5);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
    CHECK(svm::platt_prob(m, k * 0.5 + 0.1) > p);
  }
  svm::Model sym = m;
  sym.platt_b = 0.0;
  CHECK(svm::platt_prob(sym, 0.7) + svm::platt_prob(sym, -0.7) == doctest::Approx(1.0));
}

TEST_CASE("fit_platt keeps a negative slope on uninformative data") {
  const std::vector<double> dec{0.1, 0.1, 0.1, 0.1};
  const std::vector<int> lab{1, 0, 1, 0};
  const auto [a, b] = svm::fit_platt(dec, lab);
  CHECK(a < 0);
  (void)b;
}

TEST_CASE("errors") {
  svm::Dataset one;
  one.add(std::vector<double>{1.0}, 1);
  one.add(std::vector<double>{2.0}, 1);
  CHECK_THROWS_AS(svm::train(one, {}), ArgumentError);
  const auto m = svm::train(separable_pair(), {});
  CHECK_THROWS_AS(svm::decision_value(m, std::vector<double>{1.0, 2.0}), ArgumentError);
  svm::TrainConfig bad;
  bad.c = 0;
  CHECK_THROWS_AS(svm::train(separable_pair(), bad), ArgumentError);
}

TEST_CASE("constant feature dimensions pass through the standardizer") {
  const auto s = svm::Standardizer::fit({{1.0, 5.0}, {3.0, 5.0}});
  CHECK(s.std[1] == 1.0);
  CHECK(s.apply(std::vector<double>{2.0, 5.0}) == std::vector<double>{0.0, 0.0});
}

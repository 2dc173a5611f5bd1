#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "mfqe/errors.hpp"
#include "mfqe/tensor_engine.hpp"
#include "oracles.hpp"

using namespace mfqe;
using namespace mfqe::nn;

namespace {

template <class T>
Tensor<T> random_tensor(std::array<int, 4> s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<T> t(s[0], s[1], s[2], s[3]);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
Tensor<T> random_ints(std::array<int, 4> s, std::mt19937_64& rng, int lo, int hi) {
  Tensor<T> t(s[0], s[1], s[2], s[3]);
  std::uniform_int_distribution<int> u(lo, hi);
  for (auto& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
double worst(const std::vector<GradcheckEntry>& es) {
  double m = 0;
  for (const auto& e : es) m = std::max(m, e.max_rel_error);
  return m;
}

// Gradient check of `op` through a random linear probe, over several random instances.
template <class T, class Build>
double check_op(Build build, int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double m = 0;
  for (int k = 0; k < instances; ++k) {
    std::vector<Var<T>> leaves;
    auto out_shape_fn = build(rng, leaves);
    const auto probe = random_tensor<T>(out_shape_fn()->value.shape, rng);
    auto loss = [&] { return weighted_sum(out_shape_fn(), probe); };
    m = std::max(m, worst<T>(gradcheck<T>(loss, leaves, {1e-3, 64, static_cast<std::uint64_t>(k)})));
  }
  return m;
}

template <class T>
auto conv_builder(int stride, Padding pad) {
  return [=](std::mt19937_64& rng, std::vector<Var<T>>& leaves) {
    auto x = leaf(random_tensor<T>({1, 2, 5, 5}, rng), true);
    auto w = leaf(random_tensor<T>({3, 2, 3, 3}, rng), true);
    auto b = leaf(random_tensor<T>({1, 3, 1, 1}, rng), true);
    leaves = {x, w, b};
    return std::function<Var<T>()>([=] { return conv2d(x, w, b, stride, pad); });
  };
}

template <class T>
auto prelu_builder() {
  return [](std::mt19937_64& rng, std::vector<Var<T>>& leaves) {
    auto x = leaf(random_tensor<T>({2, 3, 4, 4}, rng), true);
    auto a = leaf(random_tensor<T>({1, 3, 1, 1}, rng, 0.0, 0.5), true);
    leaves = {x, a};
    return std::function<Var<T>()>([=] { return prelu(x, a); });
  };
}

template <class T>
auto warp_builder() {
  return [](std::mt19937_64& rng, std::vector<Var<T>>& leaves) {
    auto img = leaf(random_tensor<T>({1, 2, 6, 7}, rng), true);
    auto flow = leaf(random_tensor<T>({1, 2, 6, 7}, rng, -2.5, 2.5), true);
    leaves = {img, flow};
    return std::function<Var<T>()>([=] { return bilinear_sample(img, flow); });
  };
}

template <class T>
auto upscale_builder(int factor) {
  return [=](std::mt19937_64& rng, std::vector<Var<T>>& leaves) {
    auto f = leaf(random_tensor<T>({1, 2, 3, 4}, rng), true);
    leaves = {f};
    return std::function<Var<T>()>([=] { return upscale_flow(f, factor); });
  };
}

template <class T>
auto misc_builder() {
  return [](std::mt19937_64& rng, std::vector<Var<T>>& leaves) {
    auto a = leaf(random_tensor<T>({1, 2, 3, 3}, rng), true);
    auto b = leaf(random_tensor<T>({1, 1, 3, 3}, rng), true);
    auto c = leaf(random_tensor<T>({1, 3, 3, 3}, rng), true);
    leaves = {a, b, c};
    return std::function<Var<T>()>([=] {
      auto cat = concat_channels<T>({a, tanh(b)});
      return add(scale(cat, T(1.5)), c);
    });
  };
}

template <class T>
auto mse_builder() {
  return [](std::mt19937_64& rng, std::vector<Var<T>>& leaves) {
    auto a = leaf(random_tensor<T>({1, 1, 4, 4}, rng), true);
    auto b = leaf(random_tensor<T>({1, 1, 4, 4}, rng), true);
    leaves = {a, b};
    return std::function<Var<T>()>([=] { return mse(a, b); });
  };
}

}  // namespace

TEST_CASE("tensor construction") {
  CHECK_THROWS_AS(Tensor<float>(0, 1, 1, 1), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
  const Tensor<float> t(2, 3, 4, 5);
  CHECK(t.size() == 120);
  CHECK(t.offset(1, 2, 3, 4) == 119);
}

TEST_CASE("conv2d shapes and identity kernel") {
  std::mt19937_64 rng(1);
  auto x = constant(random_tensor<double>({1, 1, 6, 7}, rng));
  Tensor<double> k(1, 1, 3, 3);
  k.at(0, 0, 1, 1) = 1.0;
  const auto y = conv2d(x, constant(k), constant(Tensor<double>(1, 1, 1, 1)), 1, Padding::Same);
  CHECK(y->value.data == x->value.data);

  auto x4 = constant(Tensor<float>(1, 2, 4, 4, 1.0f));
  auto w = constant(Tensor<float>(3, 2, 3, 3, 0.1f));
  auto b = constant(Tensor<float>(1, 3, 1, 1));
  CHECK(conv2d(x4, w, b, 2, Padding::Same)->value.shape == std::array<int, 4>{1, 3, 2, 2});
  CHECK(conv2d(constant(Tensor<float>(1, 2, 5, 5)), w, b, 2, Padding::Same)->value.shape ==
        std::array<int, 4>{1, 3, 3, 3});
  CHECK(conv2d(x4, w, b, 1, Padding::Valid)->value.shape == std::array<int, 4>{1, 3, 2, 2});
  CHECK_THROWS_AS(conv2d(constant(Tensor<float>(1, 3, 4, 4)), w, b, 1, Padding::Same), ShapeError);
  CHECK_THROWS_AS(conv2d(x4, w, constant(Tensor<float>(1, 2, 1, 1)), 1, Padding::Same), ShapeError);
}

TEST_CASE("conv2d matches the brute-force oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    const int cin = 1 + static_cast<int>(rng() % 4), cout = 1 + static_cast<int>(rng() % 4);
    const int h = 3 + static_cast<int>(rng() % 6), w = 3 + static_cast<int>(rng() % 6);
    const int k = (rng() % 2) ? 3 : 5;
    const int stride = 1 + static_cast<int>(rng() % 2);
    const bool same = (rng() % 4) != 0 || h < k || w < k;
    // Integer-valued data: every partial sum is exact, so any summation order agrees bit for bit.
    const auto xi = random_ints<double>({1, cin, h, w}, rng, -8, 8);
    const auto wi = random_ints<double>({cout, cin, k, k}, rng, -8, 8);
    const auto bi = random_ints<double>({1, cout, 1, 1}, rng, -8, 8);
    const auto got = conv2d(constant(xi), constant(wi), constant(bi), stride, same ? Padding::Same : Padding::Valid);
    CHECK(got->value.data == oracle::conv2d(xi, wi, bi, stride, same).data);

    const auto xr = random_tensor<double>({1, cin, h, w}, rng);
    const auto wr = random_tensor<double>({cout, cin, k, k}, rng);
    const auto br = random_tensor<double>({1, cout, 1, 1}, rng);
    const auto gr = conv2d(constant(xr), constant(wr), constant(br), stride, same ? Padding::Same : Padding::Valid);
    const auto ref = oracle::conv2d(xr, wr, br, stride, same);
    for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(std::abs(gr->value.data[i] - ref.data[i]) < 1e-12);

    const auto gf = conv2d(constant(xr.cast<float>()), constant(wr.cast<float>()), constant(br.cast<float>()), stride,
                           same ? Padding::Same : Padding::Valid);
    for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(std::abs(gf->value.data[i] - ref.data[i]) < 1e-4);
  }
}

TEST_CASE("prelu") {
  std::mt19937_64 rng(3);
  auto pos = constant(random_tensor<float>({1, 2, 3, 3}, rng, 0.1, 1.0));
  auto slopes = constant(Tensor<float>(1, 2, 1, 1, 0.25f));
  CHECK(prelu(pos, slopes)->value.data == pos->value.data);
  auto any = constant(random_tensor<float>({1, 2, 3, 3}, rng));
  CHECK(prelu(any, constant(Tensor<float>(1, 2, 1, 1, 1.0f)))->value.data == any->value.data);
  CHECK_THROWS_AS(prelu(any, constant(Tensor<float>(1, 3, 1, 1))), ShapeError);
}

TEST_CASE("bilinear_sample") {
  Tensor<double> ramp(1, 1, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) ramp.at(0, 0, y, x) = 3.0 * x + 0.5;
  auto img = constant(ramp);
  Tensor<double> zero(1, 2, 8, 8);
  CHECK(bilinear_sample(img, constant(zero))->value.data == ramp.data);

  Tensor<double> one = zero, half = zero;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      one.at(0, 0, y, x) = 1.0;
      half.at(0, 0, y, x) = 0.5;
    }
  const auto s1 = bilinear_sample(img, constant(one))->value;
  const auto s5 = bilinear_sample(img, constant(half))->value;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 7; ++x) {
      CHECK(s1.at(0, 0, y, x) == ramp.at(0, 0, y, x) + 3.0);
      CHECK(s5.at(0, 0, y, x) == doctest::Approx((ramp.at(0, 0, y, x) + ramp.at(0, 0, y, x + 1)) / 2));
    }
  CHECK(s1.at(0, 0, 0, 7) == ramp.at(0, 0, 0, 7));  // clamped at the border

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto im = random_tensor<double>({2, 3, 9, 11}, rng);
    const auto fl = random_ints<double>({2, 2, 9, 11}, rng, -12, 12);
    CHECK(bilinear_sample(constant(im), constant(fl))->value.data == oracle::gather(im, fl).data);
    const auto imf = im.cast<float>();
    const auto flf = fl.cast<float>();
    CHECK(bilinear_sample(constant(imf), constant(flf))->value.data == oracle::gather(imf, flf).data);
  }
  CHECK_THROWS_AS(bilinear_sample(img, constant(Tensor<double>(1, 2, 8, 7))), ShapeError);
  CHECK_THROWS_AS(bilinear_sample(img, constant(Tensor<double>(1, 1, 8, 8))), ShapeError);

  Tensor<double> bad = zero;
  bad.at(0, 0, 2, 3) = std::numeric_limits<double>::quiet_NaN();
  bad.at(0, 1, 4, 4) = std::numeric_limits<double>::infinity();
  const auto sb = bilinear_sample(img, constant(bad))->value;
  CHECK(std::isnan(sb.at(0, 0, 2, 3)));
  CHECK(std::isnan(sb.at(0, 0, 4, 4)));
  CHECK(sb.at(0, 0, 0, 0) == ramp.at(0, 0, 0, 0));
}

TEST_CASE("upscale_flow") {
  Tensor<double> c(1, 2, 3, 5);
  for (int x = 0; x < 5; ++x)
    for (int y = 0; y < 3; ++y) {
      c.at(0, 0, y, x) = 0.75;
      c.at(0, 1, y, x) = -1.25;
    }
  const auto up = upscale_flow(constant(c), 4)->value;
  CHECK(up.shape == std::array<int, 4>{1, 2, 12, 20});
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 20; ++x) {
      CHECK(up.at(0, 0, y, x) == 3.0);
      CHECK(up.at(0, 1, y, x) == -5.0);
    }
  const auto z = upscale_flow(constant(Tensor<float>(1, 2, 4, 4)), 2)->value;
  for (float v : z.data) CHECK(v == 0.0f);
  CHECK_THROWS_AS(upscale_flow(constant(c), 3), ArgumentError);
  CHECK_THROWS_AS(upscale_flow(constant(Tensor<double>(1, 3, 2, 2)), 2), ShapeError);
}

TEST_CASE("elementwise and shape ops") {
  std::mt19937_64 rng(5);
  auto x = constant(random_tensor<float>({1, 2, 4, 4}, rng, -6, 6));
  const auto tx = tanh(x);
  for (float v : tx->value.data) {
    CHECK(v > -1.0f);
    CHECK(v < 1.0f);
  }
  CHECK(tanh(constant(Tensor<float>(1, 1, 1, 1)))->value.data[0] == 0.0f);
  auto a = constant(Tensor<float>(1, 2, 5, 6));
  auto b = constant(Tensor<float>(1, 3, 5, 6));
  CHECK(concat_channels<float>({a, b})->value.shape == std::array<int, 4>{1, 5, 5, 6});
  CHECK_THROWS_AS(concat_channels<float>({a, constant(Tensor<float>(1, 3, 5, 5))}), ShapeError);
  CHECK(mse(x, x)->value.data[0] == 0.0f);
  CHECK_THROWS_AS(mse(a, b), ShapeError);
  CHECK_THROWS_AS(add(a, b), ShapeError);
}

TEST_CASE("backward closed form and reachability") {
  ParamStore<double> ps;
  auto w = ps.add("w", Tensor<double>(1, 1, 1, 1, 0.7));
  auto unused = ps.add("unused", Tensor<double>(1, 1, 1, 1, 2.0));
  CHECK_THROWS_AS(ps.add("w", Tensor<double>(1, 1, 1, 1)), ArgumentError);
  auto bias = constant(Tensor<double>(1, 1, 1, 1));
  const double xv = 1.5, yv = 0.4;
  auto x = constant(Tensor<double>(1, 1, 1, 1, xv));
  auto y = constant(Tensor<double>(1, 1, 1, 1, yv));
  auto loss = mse(conv2d(x, w, bias, 1, Padding::Same), y);
  backward(loss);
  CHECK(w->grad.data[0] == doctest::Approx(2 * xv * (0.7 * xv - yv)));
  CHECK(unused->grad.data[0] == 0.0);
  backward(loss);
  CHECK(w->grad.data[0] == doctest::Approx(4 * xv * (0.7 * xv - yv)));
  ps.zero_grad();
  CHECK(w->grad.data[0] == 0.0);
  CHECK_THROWS_AS(backward(concat_channels<double>({w, w})), ArgumentError);
}

TEST_CASE("no-grad guard records nothing") {
  ParamStore<float> ps;
  auto w = ps.add("w", Tensor<float>(1, 1, 1, 1, 1.0f));
  NoGradGuard g;
  auto out = scale(w, 2.0f);
  CHECK_FALSE(out->requires_grad);
  CHECK(out->parents.empty());
}

TEST_CASE("gradient checks per op, 64-bit") {
  CHECK(check_op<double>(conv_builder<double>(1, Padding::Same), 5, 10) < 1e-5);
  CHECK(check_op<double>(conv_builder<double>(2, Padding::Same), 5, 11) < 1e-5);
  CHECK(check_op<double>(conv_builder<double>(1, Padding::Valid), 5, 12) < 1e-5);
  CHECK(check_op<double>(prelu_builder<double>(), 5, 13) < 1e-5);
  CHECK(check_op<double>(warp_builder<double>(), 5, 14) < 1e-5);
  CHECK(check_op<double>(upscale_builder<double>(2), 5, 15) < 1e-5);
  CHECK(check_op<double>(upscale_builder<double>(4), 5, 16) < 1e-5);
  CHECK(check_op<double>(misc_builder<double>(), 5, 17) < 1e-5);
  CHECK(check_op<double>(mse_builder<double>(), 5, 18) < 1e-5);
}

TEST_CASE("gradient checks per op, 32-bit") {
  CHECK(check_op<float>(conv_builder<float>(1, Padding::Same), 5, 20) < 1e-3);
  CHECK(check_op<float>(conv_builder<float>(2, Padding::Same), 5, 21) < 1e-3);
  CHECK(check_op<float>(prelu_builder<float>(), 5, 23) < 1e-3);
  CHECK(check_op<float>(warp_builder<float>(), 5, 24) < 1e-3);
  CHECK(check_op<float>(upscale_builder<float>(4), 5, 26) < 1e-3);
  CHECK(check_op<float>(misc_builder<float>(), 5, 27) < 1e-3);
  CHECK(check_op<float>(mse_builder<float>(), 5, 28) < 1e-3);
}

TEST_CASE("gradcheck skips finite differences that cross a kink") {
  auto x = leaf(Tensor<double>(1, 1, 1, 1, 0.0004), true);
  auto a = leaf(Tensor<double>(1, 1, 1, 1, 0.25), true);
  const auto r = gradcheck<double>([&] { return prelu(x, a); }, {x});
  CHECK(r[0].skipped_kinks == 1);
  CHECK(r[0].checked == 0);
}

TEST_CASE("adam") {
  ParamStore<float> ps;
  auto p = ps.add("p", Tensor<float>(1, 1, 2, 2, 1.0f));
  auto q = ps.add("q", Tensor<float>(1, 1, 1, 1, 1.0f));
  AdamState<float> bad;
  CHECK_THROWS_AS(adam_step(ps, bad), ArgumentError);
  auto st = AdamState<float>::init(ps);
  p->grad.data = {3.0f, -2.0f, 0.5f, -100.0f};
  adam_step(ps, st);
  CHECK(st.t == 1);
  CHECK(std::abs(p->value.data[0] - (1.0f - 1e-4f)) < 1e-6);
  CHECK(std::abs(p->value.data[1] - (1.0f + 1e-4f)) < 1e-6);
  CHECK(std::abs(p->value.data[3] - (1.0f + 1e-4f)) < 1e-6);
  CHECK(q->value.data[0] == 1.0f);
  CHECK(p->grad.data[0] == 3.0f);  // gradients are not cleared

  auto run = [] {
    std::mt19937_64 rng(7);
    ParamStore<float> s;
    auto w = s.add("w", he_normal<float>({2, 1, 3, 3}, rng));
    auto b = s.add("b", Tensor<float>(1, 2, 1, 1));
    auto st2 = AdamState<float>::init(s, {1e-2});
    const auto x = constant(random_tensor<float>({1, 1, 6, 6}, rng));
    const auto y = constant(random_tensor<float>({1, 2, 6, 6}, rng));
    std::vector<float> traj;
    for (int i = 0; i < 20; ++i) {
      s.zero_grad();
      backward(mse(conv2d(x, w, b, 1, Padding::Same), y));
      adam_step(s, st2);
      traj.insert(traj.end(), w->value.data.begin(), w->value.data.end());
    }
    return traj;
  };
  CHECK(run() == run());
}

TEST_CASE("forward determinism") {
  std::mt19937_64 rng(8);
  const auto x = random_tensor<float>({2, 4, 16, 16}, rng);
  const auto w = random_tensor<float>({8, 4, 3, 3}, rng);
  const auto b = random_tensor<float>({1, 8, 1, 1}, rng);
  const auto a = conv2d(constant(x), constant(w), constant(b), 1, Padding::Same)->value.data;
  const auto c = conv2d(constant(x), constant(w), constant(b), 1, Padding::Same)->value.data;
  CHECK(a == c);
}

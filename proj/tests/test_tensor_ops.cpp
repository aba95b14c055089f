#include <doctest.h>

#include <cmath>

#include "dicforge/tensor.hpp"
#include "oracle_helpers.hpp"

using namespace dicforge;
using namespace dicforge::tc;

namespace {

Tensor<double> rand_tensor(std::vector<int64_t> shape, uint64_t seed, double lo = -1, double hi = 1) {
  auto t = Tensor<double>::zeros(std::move(shape));
  Rng rng(seed);
  t.fill_uniform(rng, lo, hi);
  return t;
}

}  // namespace

TEST_CASE("1x1 conv with unit kernel is the identity") {
  auto x = rand_tensor({1, 1, 4, 4}, 1);
  auto w = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  auto b = Tensor<double>::zeros({1});
  auto y = conv2d(x, w, b, 1, {0, 0});
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.values()[size_t(i)] == x.values()[size_t(i)]);
}

TEST_CASE("3x3 all-ones kernel without padding sums the input") {
  auto x = rand_tensor({1, 1, 3, 3}, 2);
  auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto b = Tensor<double>::zeros({1});
  auto y = conv2d(x, w, b, 1, {0, 0});
  REQUIRE(y.numel() == 1);
  double expect = 0;
  for (double v : x.values()) expect += v;
  CHECK(y.values()[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("conv2d matches the quadruple-loop oracle on every supported geometry") {
  struct Case {
    int Ci, Co, kh, kw, stride, ph, pw;
  };
  const Case cases[] = {
      {1, 3, 3, 3, 1, 1, 1},  // 3x3 pad 1
      {2, 4, 2, 2, 2, 0, 0},  // 2x2 stride 2
      {3, 2, 5, 1, 1, 2, 0},  // 5x1
      {3, 2, 1, 5, 1, 0, 2},  // 1x5
      {4, 4, 1, 1, 1, 0, 0},  // 1x1
      {1, 2, 3, 3, 1, 1, 1},
  };
  uint64_t seed = 100;
  for (const Case& c : cases) {
    auto x = rand_tensor({2, c.Ci, 6, 6}, seed++);
    auto w = rand_tensor({c.Co, c.Ci, c.kh, c.kw}, seed++);
    auto b = rand_tensor({c.Co}, seed++);
    auto y = conv2d(x, w, b, c.stride, {c.ph, c.pw});
    const auto ref = oracle::conv2d_ref(x.values(), 2, c.Ci, 6, 6, w.values(), c.Co, c.kh, c.kw,
                                        b.values(), c.stride, c.ph, c.pw);
    REQUIRE(y.values().size() == ref.size());
    for (size_t i = 0; i < ref.size(); ++i) {
      CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("random 1x1x5x5 input against the brute-force oracle at 1e-6") {
  auto x = rand_tensor({1, 1, 5, 5}, 42);
  auto w = rand_tensor({1, 1, 3, 3}, 43);
  auto b = Tensor<double>::zeros({1});
  auto y = conv2d(x, w, b, 1, {1, 1});
  const auto ref = oracle::conv2d_ref(x.values(), 1, 1, 5, 5, w.values(), 1, 3, 3, b.values(), 1, 1, 1);
  for (size_t i = 0; i < ref.size(); ++i) {
    CHECK(std::abs(y.values()[i] - ref[i]) < 1e-6);
  }
}

TEST_CASE("conv2d is linear in its input") {
  auto x = rand_tensor({1, 2, 6, 6}, 50);
  auto y = rand_tensor({1, 2, 6, 6}, 51);
  auto w = rand_tensor({3, 2, 3, 3}, 52);
  const double alpha = 1.7, beta = -0.6;
  auto mix = Tensor<double>::zeros({1, 2, 6, 6});
  for (size_t i = 0; i < mix.values().size(); ++i) {
    mix.values()[i] = alpha * x.values()[i] + beta * y.values()[i];
  }
  Tensor<double> none;
  auto lhs = conv2d(mix, w, none, 1, {1, 1});
  auto cx = conv2d(x, w, none, 1, {1, 1});
  auto cy = conv2d(y, w, none, 1, {1, 1});
  for (size_t i = 0; i < lhs.values().size(); ++i) {
    CHECK(lhs.values()[i] ==
          doctest::Approx(alpha * cx.values()[i] + beta * cy.values()[i]).epsilon(1e-6));
  }
}

TEST_CASE("depthwise identity kernel passes channels through unmixed") {
  auto x = rand_tensor({1, 3, 5, 5}, 60);
  auto w = Tensor<double>::zeros({3, 1, 3, 3});
  for (int c = 0; c < 3; ++c) w.values()[size_t(c) * 9 + 4] = 1.0;  // center tap
  auto y = depthwise_conv2d(x, w, 1, {1, 1});
  for (size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("depthwise channels never mix") {
  auto x = rand_tensor({1, 2, 6, 6}, 61);
  auto w = rand_tensor({2, 1, 3, 3}, 62);
  auto y0 = depthwise_conv2d(x, w, 1, {1, 1});
  auto x2 = x.clone();
  x2.values()[3] += 10.0;  // perturb channel 0 only
  auto y1 = depthwise_conv2d(x2, w, 1, {1, 1});
  for (size_t i = 36; i < 72; ++i) CHECK(y0.values()[i] == y1.values()[i]);  // channel 1 plane
}

TEST_CASE("depthwise matches a per-channel brute-force convolution") {
  auto x = rand_tensor({2, 3, 6, 6}, 63);
  auto w = rand_tensor({3, 1, 3, 3}, 64);
  auto y = depthwise_conv2d(x, w, 1, {1, 1});
  // per-channel oracle: run the dense reference with 1 channel at a time
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 3; ++c) {
      std::vector<double> xc(36), wc(9);
      for (int i = 0; i < 36; ++i) xc[size_t(i)] = x.values()[(size_t(n) * 3 + c) * 36 + i];
      for (int i = 0; i < 9; ++i) wc[size_t(i)] = w.values()[size_t(c) * 9 + i];
      const auto ref = oracle::conv2d_ref(xc, 1, 1, 6, 6, wc, 1, 3, 3, {}, 1, 1, 1);
      for (int i = 0; i < 36; ++i) {
        CHECK(y.values()[(size_t(n) * 3 + c) * 36 + i] == doctest::Approx(ref[size_t(i)]).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("conv_transpose2d doubles the spatial size and spreads single pixels") {
  auto x = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  auto w = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  Tensor<double> none;
  auto y = conv_transpose2d(x, w, none);
  REQUIRE(y.shape() == std::vector<int64_t>{1, 1, 2, 2});
  for (double v : y.values()) CHECK(v == 1.0);

  auto x2 = rand_tensor({2, 3, 4, 5}, 70);
  auto w2 = rand_tensor({3, 2, 2, 2}, 71);
  auto b2 = rand_tensor({2}, 72);
  auto y2 = conv_transpose2d(x2, w2, b2);
  CHECK(y2.shape() == std::vector<int64_t>{2, 2, 8, 10});
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d(k=2, s=2)") {
  Rng rng(80);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = rand_tensor({1, 3, 6, 6}, 81 + trial);
    auto w = rand_tensor({4, 3, 2, 2}, 91 + trial);  // conv layout (Co,Ci,2,2)
    Tensor<double> none;
    auto cx = conv2d(x, w, none, 2, {0, 0});  // (1,4,3,3)
    auto y = rand_tensor({1, 4, 3, 3}, 101 + trial);

    // transpose layout (Ci=4 -> Co=3): wt[co][ci] = w[ci][co] swapped roles
    auto wt = Tensor<double>::zeros({4, 3, 2, 2});
    for (int a = 0; a < 4; ++a)
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < 4; ++k)
          wt.values()[(size_t(a) * 3 + c) * 4 + k] = w.values()[(size_t(a) * 3 + c) * 4 + k];
    auto ty = conv_transpose2d(y, wt, none);  // (1,3,6,6)

    const double lhs = oracle::dot(cx.values(), y.values());
    const double rhs = oracle::dot(x.values(), ty.values());
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
  }
}

TEST_CASE("maxpool basics") {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = maxpool2x2(x);
  REQUIRE(y.numel() == 1);
  CHECK(y.values()[0] == 4.0);

  auto c = Tensor<double>::full({1, 2, 4, 4}, 0.7);
  auto yc = maxpool2x2(c);
  for (double v : yc.values()) CHECK(v == 0.7);
}

TEST_CASE("upsample constant and ramp preservation") {
  auto c = Tensor<double>::full({1, 1, 4, 4}, 0.3);
  auto yc = upsample_bilinear2x(c);
  for (double v : yc.values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));

  // interior of a linear ramp stays linear with slope halved per axis
  auto ramp = Tensor<double>::zeros({1, 1, 1, 8});
  for (int x = 0; x < 8; ++x) ramp.values()[size_t(x)] = double(x);
  auto up = upsample_bilinear2x(ramp);
  REQUIRE(up.shape() == std::vector<int64_t>{1, 1, 2, 16});
  for (int x = 2; x < 14; ++x) {
    CHECK(up.values()[size_t(x)] == doctest::Approx(0.5 * x - 0.25).epsilon(1e-9));
  }
}

TEST_CASE("upsample of a random 2x2 matches hand-computed weights") {
  auto x = rand_tensor({1, 1, 2, 2}, 110);
  auto y = upsample_bilinear2x(x);
  // 1D taps for 2 -> 4 (align_corners=false): rows [1,0],[.75,.25],[.25,.75],[0,1]
  const double taps[4][2] = {{1, 0}, {0.75, 0.25}, {0.25, 0.75}, {0, 1}};
  const double* in = x.values().data();
  for (int oy = 0; oy < 4; ++oy) {
    for (int ox = 0; ox < 4; ++ox) {
      double expect = 0;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) expect += taps[oy][i] * taps[ox][j] * in[i * 2 + j];
      CHECK(y.values()[size_t(oy) * 4 + ox] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("prelu semantics") {
  auto x = Tensor<double>::from({1, 2, 1, 2}, {1.5, -2.0, -0.5, 3.0});
  auto a = Tensor<double>::from({2}, {0.25, 0.1});
  auto y = prelu(x, a);
  CHECK(y.values()[0] == 1.5);
  CHECK(y.values()[1] == doctest::Approx(-0.5));   // channel 0 slope 0.25
  CHECK(y.values()[2] == doctest::Approx(-0.05));  // channel 1 slope 0.1
  CHECK(y.values()[3] == 3.0);

  auto relu_a = Tensor<double>::zeros({2});
  auto yr = prelu(x, relu_a);
  CHECK(yr.values()[1] == 0.0);
  CHECK(yr.values()[2] == 0.0);
  CHECK(yr.values()[0] == 1.5);
}

TEST_CASE("dropout identity modes") {
  Rng rng(120);
  auto x = rand_tensor({1, 2, 4, 4}, 121);
  auto y0 = dropout(x, 0.0, true, rng);
  CHECK(y0.raw() == x.raw());  // p=0 is the exact identity
  auto y1 = dropout(x, 0.4, false, rng);
  CHECK(y1.raw() == x.raw());  // inactive mode is the exact identity
}

TEST_CASE("dropout preserves expectation under inverted scaling") {
  auto x = Tensor<double>::full({1, 1, 10, 10}, 1.0);
  Rng rng(122);
  double acc = 0;
  const int trials = 10000;
  for (int trial = 0; trial < trials; ++trial) {
    auto y = dropout(x, 0.1, true, rng);
    for (double v : y.values()) acc += v;
  }
  const double mean = acc / (double(trials) * 100.0);
  CHECK(std::abs(mean - 1.0) < 0.02);
}

TEST_CASE("add, concat, sum, mse basics") {
  auto x = Tensor<double>::from({1, 1, 1, 2}, {1.0, 2.0});
  auto y = Tensor<double>::from({1, 1, 1, 2}, {0.5, -1.0});
  auto s = add(x, y);
  CHECK(s.values()[0] == 1.5);
  CHECK(s.values()[1] == 1.0);

  auto c = concat_channels(x, y);
  CHECK(c.shape() == std::vector<int64_t>{1, 2, 1, 2});
  CHECK(c.values()[0] == 1.0);
  CHECK(c.values()[2] == 0.5);

  CHECK(mse_loss(x, x).values()[0] == 0.0);
  auto zero = Tensor<double>::from({1}, {0.0});
  auto two = Tensor<double>::from({1}, {2.0});
  CHECK(mse_loss(zero, two).values()[0] == 4.0);

  auto total = sum(x);
  CHECK(total.values()[0] == 3.0);
}

TEST_CASE("shape validation errors") {
  auto x = Tensor<double>::zeros({1, 2, 4, 4});
  auto w_bad = Tensor<double>::zeros({3, 3, 3, 3});
  Tensor<double> none;
  CHECK_THROWS_AS(conv2d(x, w_bad, none, 1, {1, 1}), validation_error);
  auto odd = Tensor<double>::zeros({1, 1, 3, 3});
  CHECK_THROWS_AS(maxpool2x2(odd), validation_error);
  auto y = Tensor<double>::zeros({1, 2, 4, 5});
  CHECK_THROWS_AS(add(x, y), validation_error);
  Rng rng(1);
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), validation_error);
}

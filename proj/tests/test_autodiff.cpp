#include <doctest.h>

#include <cmath>

#include "dicforge/tensor.hpp"
#include "oracle_helpers.hpp"

using namespace dicforge;
using namespace dicforge::tc;
using oracle::all_indices;
using oracle::max_rel_error;

namespace {

Tensor<double> leaf(std::vector<int64_t> shape, uint64_t seed, double lo = -1, double hi = 1) {
  auto t = Tensor<double>::zeros(std::move(shape));
  Rng rng(seed);
  t.fill_uniform(rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

constexpr double kTol = 1e-5;  // 64-bit per-op gradient tolerance

}  // namespace

TEST_CASE("gradient of sum is ones") {
  auto x = leaf({1, 2, 3, 3}, 1);
  auto s = sum(x);
  backward(s);
  for (double g : x.grads()) CHECK(g == 1.0);
}

TEST_CASE("backward twice accumulates exactly 2x") {
  auto x = leaf({1, 1, 2, 2}, 2);
  auto w = leaf({1, 1, 1, 1}, 3);
  Tensor<double> none;
  auto loss = mse_loss(conv2d(x, w, none, 1, {0, 0}), Tensor<double>::zeros({1, 1, 2, 2}));
  backward(loss);
  const std::vector<double> once = x.grads();
  backward(loss);
  for (size_t i = 0; i < once.size(); ++i) {
    CHECK(x.grads()[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d gradients match finite differences on all geometries") {
  struct Case {
    int Ci, Co, kh, kw, stride, ph, pw;
  };
  const Case cases[] = {
      {2, 3, 3, 3, 1, 1, 1}, {2, 4, 2, 2, 2, 0, 0}, {2, 2, 5, 1, 1, 2, 0},
      {2, 2, 1, 5, 1, 0, 2}, {3, 3, 1, 1, 1, 0, 0},
  };
  uint64_t seed = 200;
  for (const Case& c : cases) {
    auto x = leaf({2, c.Ci, 6, 6}, seed++);
    auto w = leaf({c.Co, c.Ci, c.kh, c.kw}, seed++);
    auto b = leaf({c.Co}, seed++);
    auto target = Tensor<double>::zeros(conv2d(x, w, b, c.stride, {c.ph, c.pw}).shape());

    auto eval = [&] {
      NoGradGuard guard;
      return mse_loss(conv2d(x, w, b, c.stride, {c.ph, c.pw}), target).values()[0];
    };
    auto loss = mse_loss(conv2d(x, w, b, c.stride, {c.ph, c.pw}), target);
    backward(loss);
    CHECK(max_rel_error(x, eval, all_indices(x)) < kTol);
    CHECK(max_rel_error(w, eval, all_indices(w)) < kTol);
    CHECK(max_rel_error(b, eval, all_indices(b)) < kTol);
    x.zero_grad();
  }
}

TEST_CASE("depthwise_conv2d gradients match finite differences") {
  auto x = leaf({2, 3, 5, 5}, 300);
  auto w = leaf({3, 1, 3, 3}, 301);
  auto target = Tensor<double>::zeros({2, 3, 5, 5});
  auto eval = [&] {
    NoGradGuard guard;
    return mse_loss(depthwise_conv2d(x, w, 1, {1, 1}), target).values()[0];
  };
  auto loss = mse_loss(depthwise_conv2d(x, w, 1, {1, 1}), target);
  backward(loss);
  CHECK(max_rel_error(x, eval, all_indices(x)) < kTol);
  CHECK(max_rel_error(w, eval, all_indices(w)) < kTol);
}

TEST_CASE("conv_transpose2d gradients match finite differences") {
  auto x = leaf({1, 3, 3, 3}, 310);
  auto w = leaf({3, 2, 2, 2}, 311);
  auto b = leaf({2}, 312);
  auto target = Tensor<double>::zeros({1, 2, 6, 6});
  auto eval = [&] {
    NoGradGuard guard;
    return mse_loss(conv_transpose2d(x, w, b), target).values()[0];
  };
  auto loss = mse_loss(conv_transpose2d(x, w, b), target);
  backward(loss);
  CHECK(max_rel_error(x, eval, all_indices(x)) < kTol);
  CHECK(max_rel_error(w, eval, all_indices(w)) < kTol);
  CHECK(max_rel_error(b, eval, all_indices(b)) < kTol);
}

TEST_CASE("maxpool routes gradient to the argmax only") {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {1.0, 4.0, 2.0, 3.0});
  x.set_requires_grad(true);
  auto loss = sum(maxpool2x2(x));
  backward(loss);
  CHECK(x.grads()[0] == 0.0);
  CHECK(x.grads()[1] == 1.0);
  CHECK(x.grads()[2] == 0.0);
  CHECK(x.grads()[3] == 0.0);

  // first-index tie break
  auto t = Tensor<double>::from({1, 1, 2, 2}, {5.0, 5.0, 5.0, 5.0});
  t.set_requires_grad(true);
  auto loss2 = sum(maxpool2x2(t));
  backward(loss2);
  CHECK(t.grads()[0] == 1.0);
  CHECK(t.grads()[1] == 0.0);
}

TEST_CASE("maxpool gradient matches finite differences away from ties") {
  auto x = Tensor<double>::zeros({2, 2, 4, 4});
  Rng rng(320);
  oracle::fill_random_away_from_zero(x, rng);
  // spread values further to keep argmax stable under the FD step
  for (size_t i = 0; i < x.values().size(); ++i) x.values()[i] += 0.001 * double(i);
  x.set_requires_grad(true);
  auto target = Tensor<double>::zeros({2, 2, 2, 2});
  auto eval = [&] {
    NoGradGuard guard;
    return mse_loss(maxpool2x2(x), target).values()[0];
  };
  auto loss = mse_loss(maxpool2x2(x), target);
  backward(loss);
  CHECK(max_rel_error(x, eval, all_indices(x)) < kTol);
}

TEST_CASE("upsample gradients match finite differences") {
  auto x = leaf({1, 2, 3, 3}, 330);
  auto target = Tensor<double>::zeros({1, 2, 6, 6});
  auto eval = [&] {
    NoGradGuard guard;
    return mse_loss(upsample_bilinear2x(x), target).values()[0];
  };
  auto loss = mse_loss(upsample_bilinear2x(x), target);
  backward(loss);
  CHECK(max_rel_error(x, eval, all_indices(x)) < kTol);
}

TEST_CASE("prelu gradients: slope grad equals the sum of negative inputs") {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {1.0, -2.0, -0.5, 3.0});
  x.set_requires_grad(true);
  auto a = Tensor<double>::from({1}, {0.25});
  a.set_requires_grad(true);
  auto loss = sum(prelu(x, a));
  backward(loss);
  CHECK(a.grads()[0] == doctest::Approx(-2.5).epsilon(1e-12));  // -2.0 + -0.5
  CHECK(x.grads()[0] == 1.0);
  CHECK(x.grads()[1] == 0.25);
}

TEST_CASE("prelu gradients match finite differences") {
  auto x = Tensor<double>::zeros({2, 3, 4, 4});
  Rng rng(340);
  oracle::fill_random_away_from_zero(x, rng);
  x.set_requires_grad(true);
  auto a = leaf({3}, 341, 0.05, 0.5);
  auto target = Tensor<double>::full({2, 3, 4, 4}, 0.3);
  auto eval = [&] {
    NoGradGuard guard;
    return mse_loss(prelu(x, a), target).values()[0];
  };
  auto loss = mse_loss(prelu(x, a), target);
  backward(loss);
  CHECK(max_rel_error(x, eval, all_indices(x)) < kTol);
  CHECK(max_rel_error(a, eval, all_indices(a)) < kTol);
}

TEST_CASE("dropout gradient matches finite differences with a frozen mask") {
  auto x = leaf({1, 2, 4, 4}, 350);
  auto target = Tensor<double>::zeros({1, 2, 4, 4});
  auto eval = [&] {
    NoGradGuard guard;
    Rng rng(999);  // same mask for every evaluation
    return mse_loss(dropout(x, 0.3, true, rng), target).values()[0];
  };
  Rng rng(999);
  auto loss = mse_loss(dropout(x, 0.3, true, rng), target);
  backward(loss);
  CHECK(max_rel_error(x, eval, all_indices(x)) < kTol);
}

TEST_CASE("add, concat and mse gradients match finite differences") {
  auto x = leaf({1, 2, 3, 3}, 360);
  auto y = leaf({1, 2, 3, 3}, 361);
  auto z = leaf({1, 1, 3, 3}, 362);
  auto target = Tensor<double>::zeros({1, 3, 3, 3});
  auto eval = [&] {
    NoGradGuard guard;
    return mse_loss(concat_channels(add(x, y), z), target).values()[0];
  };
  auto loss = mse_loss(concat_channels(add(x, y), z), target);
  backward(loss);
  CHECK(max_rel_error(x, eval, all_indices(x)) < kTol);
  CHECK(max_rel_error(y, eval, all_indices(y)) < kTol);
  CHECK(max_rel_error(z, eval, all_indices(z)) < kTol);
}

TEST_CASE("chained conv + prelu gradient matches finite differences") {
  auto x = leaf({1, 2, 6, 6}, 370);
  auto w = leaf({4, 2, 3, 3}, 371);
  auto b = leaf({4}, 372);
  auto a = leaf({4}, 373, 0.1, 0.4);
  auto target = Tensor<double>::zeros({1, 4, 6, 6});
  auto eval = [&] {
    NoGradGuard guard;
    return mse_loss(prelu(conv2d(x, w, b, 1, {1, 1}), a), target).values()[0];
  };
  auto loss = mse_loss(prelu(conv2d(x, w, b, 1, {1, 1}), a), target);
  backward(loss);
  CHECK(max_rel_error(w, eval, all_indices(w)) < kTol);
  CHECK(max_rel_error(x, eval, all_indices(x)) < kTol);
  CHECK(max_rel_error(a, eval, all_indices(a)) < kTol);
}

TEST_CASE("deterministic forward and backward across repeated runs") {
  auto run = [](uint64_t seed) {
    auto x = leaf({2, 2, 8, 8}, seed);
    auto w = leaf({4, 2, 3, 3}, seed + 1);
    auto b = leaf({4}, seed + 2);
    auto loss = mse_loss(conv2d(x, w, b, 1, {1, 1}), Tensor<double>::zeros({2, 4, 8, 8}));
    backward(loss);
    return std::make_pair(loss.values()[0], w.grads());
  };
  const auto a = run(7);
  const auto b = run(7);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

// --- Adam --------------------------------------------------------------------

TEST_CASE("adam with zero gradient leaves fresh parameters unchanged") {
  Parameter<double> p;
  p.name = "w";
  p.tensor = Tensor<double>::from({2}, {1.0, -2.0});
  p.tensor.set_requires_grad(true);
  p.tensor.grads().assign(2, 0.0);
  AdamOptimizer<double> opt({&p}, 1e-4);
  opt.step();
  CHECK(p.tensor.values()[0] == 1.0);
  CHECK(p.tensor.values()[1] == -2.0);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam follows the closed-form trajectory for a constant gradient") {
  Parameter<double> p;
  p.name = "w";
  p.tensor = Tensor<double>::from({1}, {1.0});
  p.tensor.set_requires_grad(true);
  AdamOptimizer<double> opt({&p}, 1e-4, 0.9, 0.999, 1e-8);

  // Frozen from an independent scalar evaluation (lr 1e-4, g = 0.5):
  const double expected[3] = {0.999900000002, 0.9998000000039999, 0.9997000000059999};
  for (int step = 0; step < 3; ++step) {
    p.tensor.grads().assign(1, 0.5);
    opt.step();
    CHECK(p.tensor.values()[0] == doctest::Approx(expected[step]).epsilon(1e-12));
  }
  CHECK(opt.step_count() == 3);
}

TEST_CASE("adam minimizes a simple quadratic") {
  Parameter<double> p;
  p.name = "w";
  p.tensor = Tensor<double>::from({1}, {3.0});
  p.tensor.set_requires_grad(true);
  AdamOptimizer<double> opt({&p}, 1e-2);
  for (int i = 0; i < 2000; ++i) {
    const double w = p.tensor.values()[0];
    p.tensor.grads().assign(1, 2.0 * (w - 1.0));
    opt.step();
  }
  CHECK(p.tensor.values()[0] == doctest::Approx(1.0).epsilon(1e-3));
}

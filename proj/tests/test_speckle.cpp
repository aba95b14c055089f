#include <doctest.h>

#include <cmath>
#include <set>

#include "dicforge/speckle.hpp"

using namespace dicforge;
using namespace dicforge::speckle;

namespace {

// Independent oracle: test every pixel center against the rotated-ellipse
// inequality directly.
int brute_force_inside_count(int frame, const Ellipse& e) {
  int count = 0;
  for (int y = 0; y < frame; ++y) {
    for (int x = 0; x < frame; ++x) {
      const double dx = x - e.cx;
      const double dy = y - e.cy;
      const double p = dx * std::cos(e.rotation) + dy * std::sin(e.rotation);
      const double q = -dx * std::sin(e.rotation) + dy * std::cos(e.rotation);
      if (p * p / (e.a * e.a) + q * q / (e.b * e.b) <= 1.0) ++count;
    }
  }
  return count;
}

uint64_t pattern_hash(const SpecklePattern& p) {
  return fnv1a64(p.pixels.data(), p.pixels.size() * sizeof(float));
}

}  // namespace

TEST_CASE("rasterize unit circle paints the center pixel") {
  Image img(16, 16, 0.f);
  rasterize_ellipse(img, {5.0, 5.0, 1.0, 1.0, 0.0, 0.5});
  CHECK(img.at(5, 5) == 0.5f);
}

TEST_CASE("rasterize sub-pixel ellipse changes exactly the brute-force pixel set") {
  Ellipse e{5.0, 5.0, 0.6, 0.6, 0.0, 0.7};
  Image img(16, 16, 0.f);
  rasterize_ellipse(img, e);
  int changed = 0;
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      if (img.at(y, x) != 0.f) ++changed;
    }
  }
  CHECK(changed == 1);
  CHECK(changed == brute_force_inside_count(16, e));
}

TEST_CASE("rasterize matches brute force on random rotated ellipses") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    Ellipse e;
    e.cx = rng.uniform(0.0, 32.0);
    e.cy = rng.uniform(0.0, 32.0);
    e.a = rng.uniform(0.6, 7.0);
    e.b = rng.uniform(0.6, 7.0);
    e.rotation = rng.uniform(0.0, std::acos(-1.0));
    e.gray = 0.9;
    Image img(32, 32, 0.f);
    rasterize_ellipse(img, e);
    int changed = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (img.at(y, x) != 0.f) ++changed;
    CHECK(changed == brute_force_inside_count(32, e));
  }
}

TEST_CASE("ellipse fully outside the frame leaves the pattern unchanged") {
  Image img(16, 16, 0.25f);
  rasterize_ellipse(img, {100.0, 100.0, 3.0, 3.0, 0.3, 0.9});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) CHECK(img.at(y, x) == 0.25f);
}

TEST_CASE("rasterize never touches pixels outside the bounding box") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Ellipse e;
    e.cx = rng.uniform(4.0, 28.0);
    e.cy = rng.uniform(4.0, 28.0);
    e.a = rng.uniform(0.6, 3.0);
    e.b = rng.uniform(0.6, 3.0);
    e.rotation = rng.uniform(0.0, 3.0);
    e.gray = 1.0;
    Image img(32, 32, 0.f);
    rasterize_ellipse(img, e);
    const double r = std::max(e.a, e.b);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        if (img.at(y, x) != 0.f) {
          CHECK(std::abs(x - e.cx) <= r + 1e-9);
          CHECK(std::abs(y - e.cy) <= r + 1e-9);
        }
      }
    }
  }
}

TEST_CASE("rasterize rejects non-finite geometry") {
  Image img(8, 8, 0.f);
  Ellipse e{4.0, 4.0, 1.0, 1.0, 0.0, 0.5};
  e.a = std::nan("");
  CHECK_THROWS_AS(rasterize_ellipse(img, e), validation_error);
}

TEST_CASE("generate_speckle is deterministic") {
  SpeckleSpec spec;
  spec.frame_size = 128;  // smaller frame keeps the test quick
  const SpecklePattern a = generate_speckle(spec, 42);
  const SpecklePattern b = generate_speckle(spec, 42);
  CHECK(a.pixels == b.pixels);
}

TEST_CASE("zero ellipse count gives a uniform background") {
  SpeckleSpec spec;
  spec.frame_size = 64;
  spec.count_range = {0, 0};
  spec.background = 0.1;
  const SpecklePattern p = generate_speckle(spec, 5);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) CHECK(p.pixels.at(y, x) == 0.1f);
}

TEST_CASE("default spec coverage falls in the regression band") {
  const SpecklePattern p = generate_speckle(SpeckleSpec{}, 42);
  size_t speckled = 0;
  for (int y = 0; y < 512; ++y) {
    for (int x = 0; x < 512; ++x) {
      const float v = p.pixels.at(y, x);
      if (v != 0.f) {
        ++speckled;
        CHECK(v >= 0.08f);
        CHECK(v <= 0.98f);
      }
    }
  }
  const double coverage = double(speckled) / (512.0 * 512.0);
  CHECK(coverage >= 0.30);
  CHECK(coverage <= 0.999);
}

TEST_CASE("pixel range stays in [0,1] across seeds") {
  SpeckleSpec spec;
  spec.frame_size = 128;
  for (uint64_t seed = 0; seed < 8; ++seed) {
    const SpecklePattern p = generate_speckle(spec, seed);
    for (int y = 0; y < 128; ++y) {
      for (int x = 0; x < 128; ++x) {
        CHECK(p.pixels.at(y, x) >= 0.f);
        CHECK(p.pixels.at(y, x) <= 1.f);
      }
    }
  }
}

TEST_CASE("1000 seeds give 1000 distinct patterns") {
  SpeckleSpec spec;
  spec.frame_size = 64;
  spec.count_range = {20, 60};
  std::set<uint64_t> hashes;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    hashes.insert(pattern_hash(generate_speckle(spec, seed)));
  }
  CHECK(hashes.size() == 1000);
}

TEST_CASE("invalid specs are rejected") {
  SpeckleSpec spec;
  spec.gray_segments = {{0.5, 0.4}};
  CHECK_THROWS_AS(generate_speckle(spec, 1), validation_error);
  spec = SpeckleSpec{};
  spec.count_range = {0, 10};
  CHECK_THROWS_AS(generate_speckle(spec, 1), validation_error);
  spec = SpeckleSpec{};
  spec.axis_range = {0.1, 2.0};
  CHECK_THROWS_AS(generate_speckle(spec, 1), validation_error);
}

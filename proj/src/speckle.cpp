#include "dicforge/speckle.hpp"

#include <algorithm>
#include <cmath>

namespace dicforge::speckle {

void SpeckleSpec::validate() const {
  if (frame_size < 1) throw validation_error("frame_size must be >= 1");
  if (gray_segments.empty()) throw validation_error("at least one gray segment required");
  for (const auto& [lo, hi] : gray_segments) {
    if (!(0.0 <= lo && lo < hi && hi <= 1.0)) {
      throw validation_error("gray segment must satisfy 0 <= lo < hi <= 1");
    }
  }
  if (count_range.first < 0 || count_range.second < count_range.first) {
    throw validation_error("bad ellipse count range");
  }
  if (count_range.second >= 1 && count_range.first < 1) {
    throw validation_error("count_range.min must be >= 1");
  }
  if (!(axis_range.first >= 0.5 && axis_range.second >= axis_range.first)) {
    throw validation_error("semi-axis range must satisfy 0.5 <= min <= max");
  }
  if (!(background >= 0.0 && background <= 1.0)) {
    throw validation_error("background must be in [0,1]");
  }
}

void rasterize_ellipse(Image& img, const Ellipse& e) {
  if (!std::isfinite(e.cx) || !std::isfinite(e.cy) || !std::isfinite(e.a) ||
      !std::isfinite(e.b) || !std::isfinite(e.rotation) || !std::isfinite(e.gray)) {
    throw validation_error("non-finite ellipse geometry");
  }
  if (e.a <= 0 || e.b <= 0) throw validation_error("ellipse semi-axes must be positive");

  const double ct = std::cos(e.rotation);
  const double st = std::sin(e.rotation);
  // Tight axis-aligned extents of the rotated ellipse.
  const double ex = std::sqrt(e.a * e.a * ct * ct + e.b * e.b * st * st);
  const double ey = std::sqrt(e.a * e.a * st * st + e.b * e.b * ct * ct);

  const int x0 = std::max(0, int(std::ceil(e.cx - ex)));
  const int x1 = std::min(img.width() - 1, int(std::floor(e.cx + ex)));
  const int y0 = std::max(0, int(std::ceil(e.cy - ey)));
  const int y1 = std::min(img.height() - 1, int(std::floor(e.cy + ey)));

  const float gray = float(e.gray);
  const double inv_a2 = 1.0 / (e.a * e.a);
  const double inv_b2 = 1.0 / (e.b * e.b);
  for (int y = y0; y <= y1; ++y) {
    const double dy = y - e.cy;
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - e.cx;
      const double p = dx * ct + dy * st;
      const double q = -dx * st + dy * ct;
      if (p * p * inv_a2 + q * q * inv_b2 <= 1.0) img.at(y, x) = gray;
    }
  }
}

SpecklePattern generate_speckle(const SpeckleSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  SpecklePattern out;
  out.seed = seed;
  out.pixels = Image(spec.frame_size, spec.frame_size, float(spec.background));

  const double frame = spec.frame_size;
  for (const auto& [lo, hi] : spec.gray_segments) {
    const uint64_t count =
        rng.uniform_int(uint64_t(spec.count_range.first), uint64_t(spec.count_range.second));
    for (uint64_t i = 0; i < count; ++i) {
      Ellipse e;
      e.cx = rng.uniform(0.0, frame);
      e.cy = rng.uniform(0.0, frame);
      e.a = rng.uniform(spec.axis_range.first, spec.axis_range.second);
      e.b = rng.uniform(spec.axis_range.first, spec.axis_range.second);
      e.rotation = rng.uniform(0.0, std::acos(-1.0));
      e.gray = rng.uniform(lo, hi);
      rasterize_ellipse(out.pixels, e);
    }
  }
  return out;
}

}  // namespace dicforge::speckle

#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "dicforge/common.hpp"

namespace dicforge::speckle {

/// Parameters of the random speckle synthesis. Defaults reproduce the
/// standard 512x512 pattern: three gray bands, each stacked with
/// 500-4000 random ellipses on a black background.
struct SpeckleSpec {
  int frame_size = 512;
  std::vector<std::pair<double, double>> gray_segments = {
      {0.08, 0.38}, {0.38, 0.68}, {0.68, 0.98}};
  std::pair<int, int> count_range = {500, 4000};
  std::pair<double, double> axis_range = {1.0, 6.0};  // semi-axes, pixels
  double background = 0.0;

  /// Throws validation_error if any field is out of range.
  void validate() const;
};

struct Ellipse {
  double cx = 0, cy = 0;      // center, pixels
  double a = 1, b = 1;        // semi-axes, pixels
  double rotation = 0;        // radians
  double gray = 0;            // intensity in [0,1]
};

struct SpecklePattern {
  Image pixels;
  uint64_t seed = 0;
};

/// Paints `e` onto the image: every pixel whose center lies inside the
/// rotated ellipse is overwritten with e.gray (painter's order). Pixels
/// outside the ellipse's bounding box are never touched.
void rasterize_ellipse(Image& img, const Ellipse& e);

/// Deterministic speckle synthesis: identical (spec, seed) gives identical
/// pixels bit-for-bit. Ellipse counts, geometry, and grays are uniform
/// draws; segments are painted in listed order, later ellipses overwrite.
SpecklePattern generate_speckle(const SpeckleSpec& spec, uint64_t seed);

}  // namespace dicforge::speckle

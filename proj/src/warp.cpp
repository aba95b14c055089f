#include "dicforge/warp.hpp"

#include <algorithm>
#include <cmath>

namespace dicforge::warp {

namespace {

// Catmull-Rom weights for the 4-tap neighborhood at fractional offset t,
// taps at offsets {-1, 0, 1, 2}. w(0) = (0,1,0,0) exactly, so integer
// coordinates reproduce grid values bit-for-bit.
inline void catmull_rom_weights(double t, double w[4]) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  w[0] = -0.5 * t3 + t2 - 0.5 * t;
  w[1] = 1.5 * t3 - 2.5 * t2 + 1.0;
  w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
  w[3] = 0.5 * t3 - 0.5 * t2;
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace

float bicubic_sample(const Image& img, double x, double y) {
  if (!std::isfinite(x) || !std::isfinite(y)) {
    throw validation_error("non-finite sample coordinates");
  }
  const int x0 = int(std::floor(x));
  const int y0 = int(std::floor(y));
  double wx[4], wy[4];
  catmull_rom_weights(x - x0, wx);
  catmull_rom_weights(y - y0, wy);

  double acc = 0.0;
  for (int j = 0; j < 4; ++j) {
    const int yy = clamp_index(y0 - 1 + j, img.height());
    double row = 0.0;
    for (int i = 0; i < 4; ++i) {
      const int xx = clamp_index(x0 - 1 + i, img.width());
      row += wx[i] * img.at(yy, xx);
    }
    acc += wy[j] * row;
  }
  return float(acc);
}

Image warp_image(const Image& img, const bspline::DisplacementField& field) {
  if (field.u.height() != img.height() || field.u.width() != img.width() ||
      field.v.height() != img.height() || field.v.width() != img.width()) {
    throw validation_error("image and displacement field sizes differ");
  }
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!std::isfinite(field.u.values.at(y, x)) || !std::isfinite(field.v.values.at(y, x))) {
        throw validation_error("non-finite displacement field value");
      }
    }
  }
  Image out(img.height(), img.width());
#pragma omp parallel for schedule(static)
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const float u = field.u.values.at(y, x);
      const float v = field.v.values.at(y, x);
      const float s = bicubic_sample(img, double(x) - u, double(y) - v);
      out.at(y, x) = s < 0.f ? 0.f : (s > 1.f ? 1.f : s);
    }
  }
  return out;
}

Image center_crop(const Image& img) {
  if (img.height() != 512 || img.width() != 512) {
    throw validation_error("center_crop expects a 512x512 image");
  }
  return center_crop_to(img, 256);
}

Grid<float> center_crop_to(const Grid<float>& g, int size) {
  if (size < 1 || size > g.height() || size > g.width()) {
    throw validation_error("crop size exceeds input");
  }
  const int oy = (g.height() - size) / 2;
  const int ox = (g.width() - size) / 2;
  Grid<float> out(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) out.at(y, x) = g.at(oy + y, ox + x);
  }
  return out;
}

}  // namespace dicforge::warp

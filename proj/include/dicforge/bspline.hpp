#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dicforge/common.hpp"

namespace dicforge::bspline {

/// Clamped knot vector: first and last knots repeated degree+1 times,
/// uniform interior knots. length = control_count + degree + 1.
struct KnotVector {
  std::vector<double> knots;
  int degree = 3;

  static KnotVector clamped_uniform(int control_count, int degree = 3);
  int control_count() const { return int(knots.size()) - degree - 1; }
  double first() const { return knots.front(); }
  double last() const { return knots.back(); }
};

/// Cox-de Boor basis N_{i,p}(t). The degree-0 indicator treats the final
/// non-degenerate span as closed on the right, so the last basis function
/// evaluates to 1 at t = last knot.
double basis(int i, int p, double t, const KnotVector& kv);

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

/// 9x9 control net over a pixel domain. Boundary rows/columns have their
/// defining in-plane coordinate pinned to the domain edge; z carries the
/// displacement magnitude in pixels.
struct ControlGrid {
  static constexpr int kN = 9;
  std::array<std::array<Vec3, kN>, kN> points{};  // [row][col]
  int width = 256;
  int height = 256;

  double min_z() const;
  double max_z() const;
};

struct GridConfig {
  int width = 256;
  int height = 256;
  double z_limit = 5.0;
  double jitter = 1.0;  // in-plane jitter amplitude as a fraction of half a cell; 0 pins the lattice
};

/// Random control net: in-plane coordinates sit on the regular 9x9 lattice
/// plus independent uniform jitter of up to half a lattice cell (scaled by
/// cfg.jitter); pinned coordinates of boundary rows/columns are exempt.
/// All z are uniform in [-z_limit, z_limit]. Pure function of (seed, cfg).
ControlGrid sample_control_grid(uint64_t seed, const GridConfig& cfg = {});

/// Surface samples (x,y,z) on a dense parameter lattice.
struct PointCloud {
  std::vector<Vec3> points;
  double min_z = 0, max_z = 0;  // of the generating control net
};

/// Evaluates S(s,t) = sum_ij N_i(s) N_j(t) P_ij on an
/// (oversample*H) x (oversample*W) lattice covering [0,1]^2.
PointCloud evaluate_surface(const ControlGrid& grid, int oversample = 4);

/// Dense per-pixel scalar displacement, |value| <= 5 for generated fields.
struct ScalarField {
  Grid<float> values;
  int height() const { return values.height(); }
  int width() const { return values.width(); }
};

/// Forward-splats cloud points into pixel bins (bin average), then fills
/// empty bins by inverse-distance interpolation of the nearest non-empty
/// neighbors. Throws validation_error if more than 10% of bins are empty
/// before the fill, which signals insufficient oversampling.
ScalarField resample_to_pixels(const PointCloud& cloud, int height, int width);

struct DisplacementField {
  ScalarField u;  // x-direction, pixels
  ScalarField v;  // y-direction, pixels
};

/// Two independent random surfaces resampled to one (u,v) field.
/// Sub-seeds for the two surfaces derive from `seed` via SplitMix64.
DisplacementField make_displacement_field(uint64_t seed, int height = 256, int width = 256);

/// Reflects a 256x256 field outward to 512x512 with the input at the
/// center: out[128+i][128+j] = in[i][j], seam value equals edge value.
ScalarField mirror_extend(const ScalarField& field);

}  // namespace dicforge::bspline

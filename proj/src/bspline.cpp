#include "dicforge/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dicforge::bspline {

KnotVector KnotVector::clamped_uniform(int control_count, int degree) {
  if (control_count < degree + 1) throw validation_error("too few control points for degree");
  KnotVector kv;
  kv.degree = degree;
  kv.knots.reserve(control_count + degree + 1);
  const int spans = control_count - degree;  // number of non-degenerate spans
  for (int i = 0; i <= degree; ++i) kv.knots.push_back(0.0);
  for (int i = 1; i < spans; ++i) kv.knots.push_back(double(i) / spans);
  for (int i = 0; i <= degree; ++i) kv.knots.push_back(1.0);
  return kv;
}

double basis(int i, int p, double t, const KnotVector& kv) {
  const auto& k = kv.knots;
  if (i < 0 || i + p + 1 >= int(k.size())) throw validation_error("basis index out of range");
  if (t < kv.first() || t > kv.last()) throw validation_error("parameter out of knot range");

  if (p == 0) {
    if (k[i] >= k[i + 1]) return 0.0;  // degenerate span
    const bool closed_right = (t == kv.last() && k[i + 1] == kv.last());
    return (k[i] <= t && (t < k[i + 1] || closed_right)) ? 1.0 : 0.0;
  }
  double acc = 0.0;
  if (k[i + p] > k[i]) {
    acc += (t - k[i]) / (k[i + p] - k[i]) * basis(i, p - 1, t, kv);
  }
  if (k[i + p + 1] > k[i + 1]) {
    acc += (k[i + p + 1] - t) / (k[i + p + 1] - k[i + 1]) * basis(i + 1, p - 1, t, kv);
  }
  return acc;
}

double ControlGrid::min_z() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& row : points)
    for (const auto& p : row) m = std::min(m, p.z);
  return m;
}

double ControlGrid::max_z() const {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& row : points)
    for (const auto& p : row) m = std::max(m, p.z);
  return m;
}

ControlGrid sample_control_grid(uint64_t seed, const GridConfig& cfg) {
  if (cfg.width < 2 || cfg.height < 2) throw validation_error("domain must be at least 2x2 px");
  if (cfg.jitter < 0 || cfg.jitter > 1) throw validation_error("jitter must be in [0,1]");

  constexpr int n = ControlGrid::kN;
  ControlGrid grid;
  grid.width = cfg.width;
  grid.height = cfg.height;

  const double cell_x = double(cfg.width) / (n - 1);
  const double cell_y = double(cfg.height) / (n - 1);
  const double amp_x = cfg.jitter * cell_x / 2;
  const double amp_y = cfg.jitter * cell_y / 2;

  Rng rng(seed);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      Vec3& p = grid.points[r][c];
      // Draws happen unconditionally so pinning a coordinate does not
      // shift the random stream of the others.
      const double jx = rng.uniform(-amp_x, amp_x);
      const double jy = rng.uniform(-amp_y, amp_y);
      p.x = (c == 0) ? 0.0 : (c == n - 1) ? double(cfg.width) : c * cell_x + jx;
      p.y = (r == 0) ? 0.0 : (r == n - 1) ? double(cfg.height) : r * cell_y + jy;
      p.z = rng.uniform(-cfg.z_limit, cfg.z_limit);
    }
  }
  return grid;
}

PointCloud evaluate_surface(const ControlGrid& grid, int oversample) {
  if (oversample < 1) throw validation_error("oversample must be >= 1");
  constexpr int n = ControlGrid::kN;
  const KnotVector kv = KnotVector::clamped_uniform(n, 3);

  const int rows = oversample * grid.height;
  const int cols = oversample * grid.width;

  // Basis rows are precomputed once per parameter value; only 4 of the 9
  // cubic basis functions are nonzero at any t, but 9 values per row keeps
  // the accumulation below branch-free.
  auto basis_table = [&](int count) {
    std::vector<std::array<double, n>> table(count);
    for (int k = 0; k < count; ++k) {
      const double t = count == 1 ? 0.0 : double(k) / (count - 1);
      for (int i = 0; i < n; ++i) table[k][i] = basis(i, 3, t, kv);
    }
    return table;
  };
  const auto bs = basis_table(cols);  // parameter s sweeps x / columns
  const auto bt = basis_table(rows);  // parameter t sweeps y / rows

  PointCloud cloud;
  cloud.points.resize(size_t(rows) * cols);
  cloud.min_z = grid.min_z();
  cloud.max_z = grid.max_z();

#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const auto& wt = bt[r];
    for (int c = 0; c < cols; ++c) {
      const auto& ws = bs[c];
      Vec3 acc;
      for (int j = 0; j < n; ++j) {
        if (wt[j] == 0.0) continue;
        double sx = 0, sy = 0, sz = 0;
        for (int i = 0; i < n; ++i) {
          const Vec3& p = grid.points[j][i];
          sx += ws[i] * p.x;
          sy += ws[i] * p.y;
          sz += ws[i] * p.z;
        }
        acc.x += wt[j] * sx;
        acc.y += wt[j] * sy;
        acc.z += wt[j] * sz;
      }
      cloud.points[size_t(r) * cols + c] = acc;
    }
  }
  return cloud;
}

ScalarField resample_to_pixels(const PointCloud& cloud, int height, int width) {
  if (height < 1 || width < 1) throw validation_error("bad resolution");

  Grid<double> sum(height, width, 0.0);
  Grid<int> hits(height, width, 0);
  for (const Vec3& p : cloud.points) {
    int x = int(std::floor(p.x));
    int y = int(std::floor(p.y));
    // Points on the far domain edge belong to the last bin.
    if (x == width) x = width - 1;
    if (y == height) y = height - 1;
    if (x < 0 || x >= width || y < 0 || y >= height) continue;
    sum.at(y, x) += p.z;
    hits.at(y, x) += 1;
  }

  size_t empty = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (hits.at(y, x) == 0) ++empty;
  if (empty * 10 > size_t(height) * width) {
    throw validation_error("more than 10% of bins empty before fill; increase oversampling");
  }

  ScalarField field;
  field.values = Grid<float>(height, width, 0.f);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (hits.at(y, x) > 0) field.values.at(y, x) = float(sum.at(y, x) / hits.at(y, x));
    }
  }
  if (empty == 0) return field;

  // Hole fill: expand Chebyshev rings around each empty bin until at least
  // 3 occupied bins are found, then inverse-distance average them. Uses the
  // pre-fill occupancy only, so the result is order-independent.
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (hits.at(y, x) > 0) continue;
      double wsum = 0, vsum = 0;
      int found = 0;
      for (int ring = 1; ring < std::max(height, width); ++ring) {
        const int y0 = std::max(0, y - ring), y1 = std::min(height - 1, y + ring);
        const int x0 = std::max(0, x - ring), x1 = std::min(width - 1, x + ring);
        for (int yy = y0; yy <= y1; ++yy) {
          for (int xx = x0; xx <= x1; ++xx) {
            if (std::max(std::abs(yy - y), std::abs(xx - x)) != ring) continue;
            if (hits.at(yy, xx) == 0) continue;
            const double d = std::hypot(double(yy - y), double(xx - x));
            const double w = 1.0 / d;
            wsum += w;
            vsum += w * (sum.at(yy, xx) / hits.at(yy, xx));
            ++found;
          }
        }
        if (found >= 3) break;
      }
      if (found == 0) throw validation_error("no occupied bins to interpolate from");
      field.values.at(y, x) = float(vsum / wsum);
    }
  }
  return field;
}

DisplacementField make_displacement_field(uint64_t seed, int height, int width) {
  GridConfig cfg;
  cfg.width = width;
  cfg.height = height;
  const ControlGrid gu = sample_control_grid(splitmix_at(seed, 0), cfg);
  const ControlGrid gv = sample_control_grid(splitmix_at(seed, 1), cfg);
  DisplacementField field;
  field.u = resample_to_pixels(evaluate_surface(gu, 4), height, width);
  field.v = resample_to_pixels(evaluate_surface(gv, 4), height, width);
  return field;
}

ScalarField mirror_extend(const ScalarField& field) {
  const int n = 256;
  if (field.height() != n || field.width() != n) {
    throw validation_error("mirror_extend expects a 256x256 field");
  }
  const int pad = n / 2;
  // Symmetric reflection with the edge sample repeated, so the seam is
  // continuous: out[pad-1] == in[0] == out[pad].
  auto reflect = [&](int i) {
    int s = i - pad;
    if (s < 0) s = -s - 1;
    if (s >= n) s = 2 * n - 1 - s;
    return s;
  };
  ScalarField out;
  out.values = Grid<float>(2 * n, 2 * n);
  for (int y = 0; y < 2 * n; ++y) {
    const int sy = reflect(y);
    for (int x = 0; x < 2 * n; ++x) {
      out.values.at(y, x) = field.values.at(sy, reflect(x));
    }
  }
  return out;
}

}  // namespace dicforge::bspline

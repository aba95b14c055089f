#pragma once

// Independent oracles shared by the tensor and network test suites. These
// deliberately re-derive results from definitions (quadruple-loop
// convolution, central finite differences) and never call into the
// implementation paths they are checking.

#include <cmath>
#include <functional>
#include <vector>

#include "dicforge/tensor.hpp"

namespace oracle {

using dicforge::Rng;
using dicforge::tc::Tensor;

/// Direct cross-correlation from the definition: every output element is
/// a fresh quadruple loop over (ci, ky, kx) with zero padding.
inline std::vector<double> conv2d_ref(const std::vector<double>& x, int N, int Ci, int H, int W,
                                      const std::vector<double>& w, int Co, int kh, int kw,
                                      const std::vector<double>& b, int stride, int ph, int pw) {
  const int OH = (H + 2 * ph - kh) / stride + 1;
  const int OW = (W + 2 * pw - kw) / stride + 1;
  std::vector<double> out(size_t(N) * Co * OH * OW, 0.0);
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = b.empty() ? 0.0 : b[size_t(co)];
          for (int ci = 0; ci < Ci; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride + ky - ph;
                const int ix = ox * stride + kx - pw;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((size_t(n) * Ci + ci) * H + iy) * W + ix] *
                       w[((size_t(co) * Ci + ci) * kh + ky) * kw + kx];
              }
          out[((size_t(n) * Co + co) * OH + oy) * OW + ox] = acc;
        }
  return out;
}

inline void fill_random(Tensor<double>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  t.fill_uniform(rng, lo, hi);
}

/// Random values bounded away from zero (PReLU / maxpool kink safety).
inline void fill_random_away_from_zero(Tensor<double>& t, Rng& rng, double margin = 0.2) {
  for (auto& v : t.values()) {
    const double mag = margin + (1.0 - margin) * rng.uniform();
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
}

/// Central finite-difference check of d(loss)/d(param) for the listed
/// elements. `eval_loss` must rebuild the whole graph from current leaf
/// values. Returns the maximum relative error against the analytic grad
/// already accumulated in param.grads().
inline double max_rel_error(Tensor<double>& param, const std::function<double()>& eval_loss,
                            const std::vector<size_t>& elements, double h = 1e-6) {
  double worst = 0.0;
  for (const size_t i : elements) {
    const double saved = param.values()[i];
    param.values()[i] = saved + h;
    const double up = eval_loss();
    param.values()[i] = saved - h;
    const double down = eval_loss();
    param.values()[i] = saved;
    const double fd = (up - down) / (2 * h);
    const double an = param.grads().empty() ? 0.0 : param.grads()[i];
    // The floor keeps finite-difference roundoff (~1e-10 absolute here)
    // from dominating the ratio on near-zero gradient components.
    const double scale = std::max({1e-4, std::abs(fd), std::abs(an)});
    worst = std::max(worst, std::abs(fd - an) / scale);
  }
  return worst;
}

inline std::vector<size_t> all_indices(const Tensor<double>& t) {
  std::vector<size_t> idx(size_t(t.numel()));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

inline std::vector<size_t> sample_indices(const Tensor<double>& t, size_t count, Rng& rng) {
  std::vector<size_t> idx;
  for (size_t i = 0; i < count; ++i) {
    idx.push_back(size_t(rng.uniform_int(0, uint64_t(t.numel()) - 1)));
  }
  return idx;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace oracle

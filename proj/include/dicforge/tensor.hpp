#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "dicforge/common.hpp"

// Dense NCHW tensors with reverse-mode differentiation. Every operator
// computes its forward result eagerly and, when gradients are being
// tracked, records a closure that scatters the output gradient back into
// its inputs. backward() replays those closures in reverse topological
// order. All loops are deterministic: parallel regions use static
// schedules and every output element is owned by exactly one thread, so
// results are bit-identical for any fixed thread count.

namespace dicforge::tc {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// RAII guard disabling tape recording (inference paths).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

/// Optional stage annotation picked up by nodes at creation; used to
/// audit cross-stage (skip) connections in a recorded graph.
inline int& stage_tag() {
  thread_local int tag = -1;
  return tag;
}

struct StageScope {
  int prev;
  explicit StageScope(int tag) : prev(stage_tag()) { stage_tag() = tag; }
  ~StageScope() { stage_tag() = prev; }
};

template <typename T>
struct Node {
  std::vector<int64_t> shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  int stage = -1;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // null for leaves

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape) {
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(size_t(t.node_->numel()), T(0));
    t.node_->stage = stage_tag();
    return t;
  }

  static Tensor full(std::vector<int64_t> shape, T fill) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.values().begin(), t.values().end(), fill);
    return t;
  }

  static Tensor from(std::vector<int64_t> shape, std::vector<T> data) {
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = std::move(shape);
    if (int64_t(data.size()) != t.node_->numel()) {
      throw validation_error("data length does not match shape");
    }
    t.node_->value = std::move(data);
    t.node_->stage = stage_tag();
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int64_t>& shape() const { return node_->shape; }
  int64_t dim(size_t i) const { return node_->shape[i]; }
  size_t rank() const { return node_->shape.size(); }
  int64_t numel() const { return node_->numel(); }

  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  std::vector<T>& grads() { return node_->grad; }
  const std::vector<T>& grads() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Deep copy of values; the copy is a fresh leaf.
  Tensor clone() const {
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (auto& v : node_->value) v = T(rng.uniform(lo, hi));
  }

  std::shared_ptr<Node<T>> node() const { return node_; }
  Node<T>* raw() const { return node_.get(); }

  bool same_shape(const Tensor& other) const { return node_->shape == other.node_->shape; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
bool track(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_mode()) return false;
  for (const Tensor<T>* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void attach(Tensor<T>& out, std::vector<std::shared_ptr<Node<T>>> parents,
            std::function<void(Node<T>&)> fn) {
  out.raw()->requires_grad = true;
  out.raw()->parents = std::move(parents);
  out.raw()->backward_fn = std::move(fn);
}

inline void check(bool cond, const char* msg) {
  if (!cond) throw validation_error(msg);
}

}  // namespace detail

// --------------------------------------------------------------------------
// conv2d: cross-correlation, weight (Co, Ci, kh, kw), bias (Co) optional
// (pass an undefined Tensor for none). Asymmetric padding (ph, pw).
// --------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                 std::pair<int, int> pad) {
  detail::check(x.rank() == 4 && w.rank() == 4, "conv2d expects rank-4 tensors");
  const int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  detail::check(w.dim(1) == Ci, "conv2d channel mismatch");
  detail::check(!b.defined() || (b.rank() == 1 && b.dim(0) == Co), "conv2d bias shape mismatch");
  const int ph = pad.first, pw = pad.second;
  const int64_t OH = (H + 2 * ph - kh) / stride + 1;
  const int64_t OW = (W + 2 * pw - kw) / stride + 1;
  detail::check(OH >= 1 && OW >= 1, "conv2d output would be empty");

  // 1x1 stride-1 convolutions dominate the network cost; they act on the
  // flat pixel plane with no row segmentation, which keeps the inner loops
  // long enough to vectorize well even at small spatial sizes.
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && ph == 0 && pw == 0;

  Tensor<T> out = Tensor<T>::zeros({N, Co, OH, OW});
  const T* xp = x.values().data();
  const T* wp = w.values().data();
  T* op = out.values().data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t co = 0; co < Co; ++co) {
      T* oplane = op + (n * Co + co) * OH * OW;
      const T bias = b.defined() ? b.values()[size_t(co)] : T(0);
      std::fill(oplane, oplane + OH * OW, bias);
      if (pointwise) {
        const int64_t P = H * W;
        const T* wrow = wp + co * Ci;
        for (int64_t ci = 0; ci < Ci; ++ci) {
          const T wv = wrow[ci];
          const T* xplane = xp + (n * Ci + ci) * P;
          for (int64_t p = 0; p < P; ++p) oplane[p] += wv * xplane[p];
        }
        continue;
      }
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const T* xplane = xp + (n * Ci + ci) * H * W;
        const T* wbase = wp + (co * Ci + ci) * kh * kw;
        for (int64_t ky = 0; ky < kh; ++ky) {
          for (int64_t kx = 0; kx < kw; ++kx) {
            const T wv = wbase[ky * kw + kx];
            if (wv == T(0)) continue;
            // valid ox: 0 <= ox*stride + kx - pw < W
            int64_t ox0 = 0;
            while (ox0 < OW && ox0 * stride + kx - pw < 0) ++ox0;
            int64_t ox1 = OW;
            while (ox1 > ox0 && (ox1 - 1) * stride + kx - pw >= W) --ox1;
            for (int64_t oy = 0; oy < OH; ++oy) {
              const int64_t iy = oy * stride + ky - ph;
              if (iy < 0 || iy >= H) continue;
              const T* xrow = xplane + iy * W + ox0 * stride + kx - pw;
              T* orow = oplane + oy * OW;
              if (stride == 1) {
                for (int64_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xrow[ox - ox0];
              } else {
                for (int64_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xrow[(ox - ox0) * stride];
              }
            }
          }
        }
      }
    }
  }

  if (detail::track<T>({&x, &w, &b})) {
    auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
    const int s = stride;
    detail::attach<T>(
        out, bn ? std::vector{xn, wn, bn} : std::vector{xn, wn},
        [=](Node<T>& self) {
          const T* dy = self.grad.data();
          // input gradient: scatter dy through the kernel, one (n, ci)
          // plane per thread
          const bool pointwise = kh == 1 && kw == 1 && s == 1 && ph == 0 && pw == 0;
          if (xn->requires_grad) {
            xn->ensure_grad();
            T* dx = xn->grad.data();
#pragma omp parallel for collapse(2) schedule(static)
            for (int64_t n = 0; n < N; ++n) {
              for (int64_t ci = 0; ci < Ci; ++ci) {
                T* dxplane = dx + (n * Ci + ci) * H * W;
                if (pointwise) {
                  const int64_t P = H * W;
                  for (int64_t co = 0; co < Co; ++co) {
                    const T wv = wn->value[size_t(co * Ci + ci)];
                    const T* dyplane = dy + (n * Co + co) * P;
                    for (int64_t p = 0; p < P; ++p) dxplane[p] += wv * dyplane[p];
                  }
                  continue;
                }
                for (int64_t co = 0; co < Co; ++co) {
                  const T* dyplane = dy + (n * Co + co) * OH * OW;
                  const T* wbase = wn->value.data() + (co * Ci + ci) * kh * kw;
                  for (int64_t ky = 0; ky < kh; ++ky) {
                    for (int64_t kx = 0; kx < kw; ++kx) {
                      const T wv = wbase[ky * kw + kx];
                      if (wv == T(0)) continue;
                      int64_t ox0 = 0;
                      while (ox0 < OW && ox0 * s + kx - pw < 0) ++ox0;
                      int64_t ox1 = OW;
                      while (ox1 > ox0 && (ox1 - 1) * s + kx - pw >= W) --ox1;
                      for (int64_t oy = 0; oy < OH; ++oy) {
                        const int64_t iy = oy * s + ky - ph;
                        if (iy < 0 || iy >= H) continue;
                        const T* dyrow = dyplane + oy * OW;
                        T* dxrow = dxplane + iy * W + ox0 * s + kx - pw;
                        if (s == 1) {
                          for (int64_t ox = ox0; ox < ox1; ++ox) dxrow[ox - ox0] += wv * dyrow[ox];
                        } else {
                          for (int64_t ox = ox0; ox < ox1; ++ox) {
                            dxrow[(ox - ox0) * s] += wv * dyrow[ox];
                          }
                        }
                      }
                    }
                  }
                }
              }
            }
          }
          if (wn->requires_grad) {
            wn->ensure_grad();
            T* dw = wn->grad.data();
#pragma omp parallel for collapse(2) schedule(static)
            for (int64_t co = 0; co < Co; ++co) {
              for (int64_t ci = 0; ci < Ci; ++ci) {
                if (pointwise) {
                  const int64_t P = H * W;
                  T acc = 0;
                  for (int64_t n = 0; n < N; ++n) {
                    const T* xplane = xn->value.data() + (n * Ci + ci) * P;
                    const T* dyplane = dy + (n * Co + co) * P;
#pragma omp simd reduction(+ : acc)
                    for (int64_t p = 0; p < P; ++p) acc += xplane[p] * dyplane[p];
                  }
                  dw[co * Ci + ci] += acc;
                  continue;
                }
                for (int64_t ky = 0; ky < kh; ++ky) {
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    int64_t ox0 = 0;
                    while (ox0 < OW && ox0 * s + kx - pw < 0) ++ox0;
                    int64_t ox1 = OW;
                    while (ox1 > ox0 && (ox1 - 1) * s + kx - pw >= W) --ox1;
                    T acc = 0;
                    for (int64_t n = 0; n < N; ++n) {
                      const T* xplane = xn->value.data() + (n * Ci + ci) * H * W;
                      const T* dyplane = dy + (n * Co + co) * OH * OW;
                      for (int64_t oy = 0; oy < OH; ++oy) {
                        const int64_t iy = oy * s + ky - ph;
                        if (iy < 0 || iy >= H) continue;
                        const T* xrow = xplane + iy * W + ox0 * s + kx - pw;
                        const T* dyrow = dyplane + oy * OW;
                        if (s == 1) {
#pragma omp simd reduction(+ : acc)
                          for (int64_t ox = ox0; ox < ox1; ++ox) acc += xrow[ox - ox0] * dyrow[ox];
                        } else {
#pragma omp simd reduction(+ : acc)
                          for (int64_t ox = ox0; ox < ox1; ++ox) {
                            acc += xrow[(ox - ox0) * s] * dyrow[ox];
                          }
                        }
                      }
                    }
                    dw[((co * Ci + ci) * kh + ky) * kw + kx] += acc;
                  }
                }
              }
            }
          }
          if (bn && bn->requires_grad) {
            bn->ensure_grad();
            T* db = bn->grad.data();
            for (int64_t co = 0; co < Co; ++co) {
              T acc = 0;
              for (int64_t n = 0; n < N; ++n) {
                const T* dyplane = dy + (n * Co + co) * OH * OW;
#pragma omp simd reduction(+ : acc)
                for (int64_t i = 0; i < OH * OW; ++i) acc += dyplane[i];
              }
              db[co] += acc;
            }
          }
        });
  }
  return out;
}

// --------------------------------------------------------------------------
// depthwise_conv2d: per-channel spatial filter, weight (C, 1, kh, kw).
// --------------------------------------------------------------------------

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride,
                           std::pair<int, int> pad) {
  detail::check(x.rank() == 4 && w.rank() == 4, "depthwise_conv2d expects rank-4 tensors");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t kh = w.dim(2), kw = w.dim(3);
  detail::check(w.dim(0) == C && w.dim(1) == 1, "depthwise weight must be (C,1,kh,kw)");
  const int ph = pad.first, pw = pad.second;
  const int64_t OH = (H + 2 * ph - kh) / stride + 1;
  const int64_t OW = (W + 2 * pw - kw) / stride + 1;
  detail::check(OH >= 1 && OW >= 1, "depthwise output would be empty");

  Tensor<T> out = Tensor<T>::zeros({N, C, OH, OW});
  const T* xp = x.values().data();
  const T* wp = w.values().data();
  T* op = out.values().data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* xplane = xp + (n * C + c) * H * W;
      const T* wbase = wp + c * kh * kw;
      T* oplane = op + (n * C + c) * OH * OW;
      for (int64_t oy = 0; oy < OH; ++oy) {
        for (int64_t ox = 0; ox < OW; ++ox) {
          T acc = 0;
          for (int64_t ky = 0; ky < kh; ++ky) {
            const int64_t iy = oy * stride + ky - ph;
            if (iy < 0 || iy >= H) continue;
            for (int64_t kx = 0; kx < kw; ++kx) {
              const int64_t ix = ox * stride + kx - pw;
              if (ix < 0 || ix >= W) continue;
              acc += wbase[ky * kw + kx] * xplane[iy * W + ix];
            }
          }
          oplane[oy * OW + ox] = acc;
        }
      }
    }
  }

  if (detail::track<T>({&x, &w})) {
    auto xn = x.node(), wn = w.node();
    const int s = stride;
    detail::attach<T>(out, {xn, wn}, [=](Node<T>& self) {
      const T* dy = self.grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        T* dx = xn->grad.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t c = 0; c < C; ++c) {
            T* dxplane = dx + (n * C + c) * H * W;
            const T* dyplane = dy + (n * C + c) * OH * OW;
            const T* wbase = wn->value.data() + c * kh * kw;
            for (int64_t oy = 0; oy < OH; ++oy) {
              for (int64_t ox = 0; ox < OW; ++ox) {
                const T g = dyplane[oy * OW + ox];
                for (int64_t ky = 0; ky < kh; ++ky) {
                  const int64_t iy = oy * s + ky - ph;
                  if (iy < 0 || iy >= H) continue;
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    const int64_t ix = ox * s + kx - pw;
                    if (ix < 0 || ix >= W) continue;
                    dxplane[iy * W + ix] += g * wbase[ky * kw + kx];
                  }
                }
              }
            }
          }
        }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        T* dw = wn->grad.data();
#pragma omp parallel for schedule(static)
        for (int64_t c = 0; c < C; ++c) {
          for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
              T acc = 0;
              for (int64_t n = 0; n < N; ++n) {
                const T* xplane = xn->value.data() + (n * C + c) * H * W;
                const T* dyplane = dy + (n * C + c) * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy) {
                  const int64_t iy = oy * s + ky - ph;
                  if (iy < 0 || iy >= H) continue;
                  for (int64_t ox = 0; ox < OW; ++ox) {
                    const int64_t ix = ox * s + kx - pw;
                    if (ix < 0 || ix >= W) continue;
                    acc += xplane[iy * W + ix] * dyplane[oy * OW + ox];
                  }
                }
              }
              dw[c * kh * kw + ky * kw + kx] += acc;
            }
          }
        }
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// conv_transpose2d: exact adjoint of conv2d(stride 2, k 2, pad 0).
// Weight layout (Ci, Co, 2, 2); output doubles the spatial size.
// --------------------------------------------------------------------------

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::check(x.rank() == 4 && w.rank() == 4, "conv_transpose2d expects rank-4 tensors");
  const int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::check(w.dim(0) == Ci && w.dim(2) == 2 && w.dim(3) == 2,
                "conv_transpose2d weight must be (Ci,Co,2,2)");
  const int64_t Co = w.dim(1);
  detail::check(!b.defined() || (b.rank() == 1 && b.dim(0) == Co),
                "conv_transpose2d bias shape mismatch");
  const int64_t OH = 2 * H, OW = 2 * W;

  Tensor<T> out = Tensor<T>::zeros({N, Co, OH, OW});
  const T* xp = x.values().data();
  const T* wp = w.values().data();
  T* op = out.values().data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t co = 0; co < Co; ++co) {
      T* oplane = op + (n * Co + co) * OH * OW;
      const T bias = b.defined() ? b.values()[size_t(co)] : T(0);
      std::fill(oplane, oplane + OH * OW, bias);
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const T* xplane = xp + (n * Ci + ci) * H * W;
        const T* wbase = wp + (ci * Co + co) * 4;
        for (int64_t i = 0; i < H; ++i) {
          for (int64_t j = 0; j < W; ++j) {
            const T xv = xplane[i * W + j];
            T* o00 = oplane + 2 * i * OW + 2 * j;
            o00[0] += xv * wbase[0];
            o00[1] += xv * wbase[1];
            o00[OW] += xv * wbase[2];
            o00[OW + 1] += xv * wbase[3];
          }
        }
      }
    }
  }

  if (detail::track<T>({&x, &w, &b})) {
    auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
    detail::attach<T>(
        out, bn ? std::vector{xn, wn, bn} : std::vector{xn, wn},
        [=](Node<T>& self) {
          const T* dy = self.grad.data();
          if (xn->requires_grad) {
            xn->ensure_grad();
            T* dx = xn->grad.data();
#pragma omp parallel for collapse(2) schedule(static)
            for (int64_t n = 0; n < N; ++n) {
              for (int64_t ci = 0; ci < Ci; ++ci) {
                T* dxplane = dx + (n * Ci + ci) * H * W;
                for (int64_t co = 0; co < Co; ++co) {
                  const T* dyplane = dy + (n * Co + co) * OH * OW;
                  const T* wbase = wn->value.data() + (ci * Co + co) * 4;
                  for (int64_t i = 0; i < H; ++i) {
                    for (int64_t j = 0; j < W; ++j) {
                      const T* d00 = dyplane + 2 * i * OW + 2 * j;
                      dxplane[i * W + j] += wbase[0] * d00[0] + wbase[1] * d00[1] +
                                            wbase[2] * d00[OW] + wbase[3] * d00[OW + 1];
                    }
                  }
                }
              }
            }
          }
          if (wn->requires_grad) {
            wn->ensure_grad();
            T* dw = wn->grad.data();
#pragma omp parallel for collapse(2) schedule(static)
            for (int64_t ci = 0; ci < Ci; ++ci) {
              for (int64_t co = 0; co < Co; ++co) {
                T acc[4] = {0, 0, 0, 0};
                for (int64_t n = 0; n < N; ++n) {
                  const T* xplane = xn->value.data() + (n * Ci + ci) * H * W;
                  const T* dyplane = dy + (n * Co + co) * OH * OW;
                  for (int64_t i = 0; i < H; ++i) {
                    for (int64_t j = 0; j < W; ++j) {
                      const T xv = xplane[i * W + j];
                      const T* d00 = dyplane + 2 * i * OW + 2 * j;
                      acc[0] += xv * d00[0];
                      acc[1] += xv * d00[1];
                      acc[2] += xv * d00[OW];
                      acc[3] += xv * d00[OW + 1];
                    }
                  }
                }
                for (int k = 0; k < 4; ++k) dw[(ci * Co + co) * 4 + k] += acc[k];
              }
            }
          }
          if (bn && bn->requires_grad) {
            bn->ensure_grad();
            T* db = bn->grad.data();
            for (int64_t co = 0; co < Co; ++co) {
              T acc = 0;
              for (int64_t n = 0; n < N; ++n) {
                const T* dyplane = dy + (n * Co + co) * OH * OW;
#pragma omp simd reduction(+ : acc)
                for (int64_t i = 0; i < OH * OW; ++i) acc += dyplane[i];
              }
              db[co] += acc;
            }
          }
        });
  }
  return out;
}

// --------------------------------------------------------------------------
// maxpool 2x2 stride 2; gradient routes to the argmax, first index on ties.
// --------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& x) {
  detail::check(x.rank() == 4, "maxpool2x2 expects a rank-4 tensor");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::check(H % 2 == 0 && W % 2 == 0, "maxpool2x2 requires even spatial size");
  const int64_t OH = H / 2, OW = W / 2;

  Tensor<T> out = Tensor<T>::zeros({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<int32_t>>(size_t(N * C * OH * OW));
  const T* xp = x.values().data();
  T* op = out.values().data();
  int32_t* am = argmax->data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* xplane = xp + (n * C + c) * H * W;
      T* oplane = op + (n * C + c) * OH * OW;
      int32_t* aplane = am + (n * C + c) * OH * OW;
      for (int64_t oy = 0; oy < OH; ++oy) {
        for (int64_t ox = 0; ox < OW; ++ox) {
          const int64_t base = 2 * oy * W + 2 * ox;
          const int64_t cand[4] = {base, base + 1, base + W, base + W + 1};
          int best = 0;
          T bv = xplane[cand[0]];
          for (int k = 1; k < 4; ++k) {
            if (xplane[cand[k]] > bv) {
              bv = xplane[cand[k]];
              best = k;
            }
          }
          oplane[oy * OW + ox] = bv;
          aplane[oy * OW + ox] = int32_t(cand[best]);
        }
      }
    }
  }

  if (detail::track<T>({&x})) {
    auto xn = x.node();
    detail::attach<T>(out, {xn}, [=](Node<T>& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      const T* dy = self.grad.data();
      T* dx = xn->grad.data();
      const int32_t* amp = argmax->data();
#pragma omp parallel for collapse(2) schedule(static)
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
          const int64_t plane = n * C + c;
          const T* dyplane = dy + plane * OH * OW;
          const int32_t* aplane = amp + plane * OH * OW;
          T* dxplane = dx + plane * H * W;
          for (int64_t i = 0; i < OH * OW; ++i) dxplane[aplane[i]] += dyplane[i];
        }
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// bilinear 2x upsampling, align_corners = false.
// --------------------------------------------------------------------------

namespace detail {

struct LinearTap {
  int i0, i1;
  double f;  // weight of i1
};

inline std::vector<LinearTap> upsample_taps(int64_t in, int64_t out) {
  std::vector<LinearTap> taps;
  taps.resize(size_t(out));
  for (int64_t o = 0; o < out; ++o) {
    const double src = (double(o) + 0.5) * double(in) / double(out) - 0.5;
    int i0 = int(std::floor(src));
    double f = src - i0;
    int i1 = i0 + 1;
    if (i0 < 0) i0 = 0;
    if (i1 < 0) i1 = 0;
    if (i0 >= int(in)) i0 = int(in) - 1;
    if (i1 >= int(in)) i1 = int(in) - 1;
    taps[size_t(o)] = {i0, i1, f};
  }
  return taps;
}

}  // namespace detail

template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  detail::check(x.rank() == 4, "upsample_bilinear2x expects a rank-4 tensor");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t OH = 2 * H, OW = 2 * W;
  const auto ty = detail::upsample_taps(H, OH);
  const auto tx = detail::upsample_taps(W, OW);

  Tensor<T> out = Tensor<T>::zeros({N, C, OH, OW});
  const T* xp = x.values().data();
  T* op = out.values().data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* xplane = xp + (n * C + c) * H * W;
      T* oplane = op + (n * C + c) * OH * OW;
      for (int64_t oy = 0; oy < OH; ++oy) {
        const auto& a = ty[size_t(oy)];
        for (int64_t ox = 0; ox < OW; ++ox) {
          const auto& bx = tx[size_t(ox)];
          const T top = T((1 - bx.f)) * xplane[a.i0 * W + bx.i0] + T(bx.f) * xplane[a.i0 * W + bx.i1];
          const T bot = T((1 - bx.f)) * xplane[a.i1 * W + bx.i0] + T(bx.f) * xplane[a.i1 * W + bx.i1];
          oplane[oy * OW + ox] = T(1 - a.f) * top + T(a.f) * bot;
        }
      }
    }
  }

  if (detail::track<T>({&x})) {
    auto xn = x.node();
    detail::attach<T>(out, {xn}, [=](Node<T>& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      const T* dy = self.grad.data();
      T* dx = xn->grad.data();
#pragma omp parallel for collapse(2) schedule(static)
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
          const int64_t plane = n * C + c;
          const T* dyplane = dy + plane * OH * OW;
          T* dxplane = dx + plane * H * W;
          for (int64_t oy = 0; oy < OH; ++oy) {
            const auto& a = ty[size_t(oy)];
            for (int64_t ox = 0; ox < OW; ++ox) {
              const auto& bx = tx[size_t(ox)];
              const T g = dyplane[oy * OW + ox];
              dxplane[a.i0 * W + bx.i0] += T((1 - a.f) * (1 - bx.f)) * g;
              dxplane[a.i0 * W + bx.i1] += T((1 - a.f) * bx.f) * g;
              dxplane[a.i1 * W + bx.i0] += T(a.f * (1 - bx.f)) * g;
              dxplane[a.i1 * W + bx.i1] += T(a.f * bx.f) * g;
            }
          }
        }
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// PReLU with learnable per-channel slope a (shape (C)).
// --------------------------------------------------------------------------

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& a) {
  detail::check(x.rank() == 4, "prelu expects a rank-4 tensor");
  detail::check(a.rank() == 1 && a.dim(0) == x.dim(1), "prelu slope must be (C)");
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xp = x.values().data();
  const T* ap = a.values().data();
  T* op = out.values().data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T slope = ap[c];
      const T* xrow = xp + (n * C + c) * HW;
      T* orow = op + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) orow[i] = xrow[i] >= T(0) ? xrow[i] : slope * xrow[i];
    }
  }

  if (detail::track<T>({&x, &a})) {
    auto xn = x.node(), an = a.node();
    detail::attach<T>(out, {xn, an}, [=](Node<T>& self) {
      const T* dy = self.grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        T* dx = xn->grad.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t c = 0; c < C; ++c) {
            const T slope = an->value[size_t(c)];
            const int64_t off = (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
              dx[off + i] += dy[off + i] * (xn->value[size_t(off + i)] >= T(0) ? T(1) : slope);
            }
          }
        }
      }
      if (an->requires_grad) {
        an->ensure_grad();
        T* da = an->grad.data();
        const T* xv = xn->value.data();
#pragma omp parallel for schedule(static)
        for (int64_t c = 0; c < C; ++c) {
          T acc = 0;
          for (int64_t n = 0; n < N; ++n) {
            const int64_t off = (n * C + c) * HW;
#pragma omp simd reduction(+ : acc)
            for (int64_t i = 0; i < HW; ++i) {
              acc += xv[off + i] < T(0) ? dy[off + i] * xv[off + i] : T(0);
            }
          }
          da[c] += acc;
        }
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// Inverted dropout. Inactive (or p == 0) is the exact identity and shares
// the input node. Mask draws consume rng in element order.
// --------------------------------------------------------------------------

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool active, Rng& rng) {
  detail::check(p >= 0.0 && p < 1.0, "dropout probability must be in [0,1)");
  if (!active || p == 0.0) return x;

  const int64_t n = x.numel();
  auto mask = std::make_shared<std::vector<uint8_t>>(size_t(n));
  const T scale = T(1.0 / (1.0 - p));

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xp = x.values().data();
  T* op = out.values().data();
  for (int64_t i = 0; i < n; ++i) {
    const bool keep = rng.uniform() >= p;
    (*mask)[size_t(i)] = keep;
    op[i] = keep ? xp[i] * scale : T(0);
  }

  if (detail::track<T>({&x})) {
    auto xn = x.node();
    detail::attach<T>(out, {xn}, [=](Node<T>& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      const T* dy = self.grad.data();
      T* dx = xn->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        if ((*mask)[size_t(i)]) dx[i] += dy[i] * scale;
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// Elementwise add, channel concat, reductions.
// --------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  detail::check(x.same_shape(y), "add expects matching shapes");
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const int64_t n = x.numel();
  const T* xp = x.values().data();
  const T* yp = y.values().data();
  T* op = out.values().data();
  for (int64_t i = 0; i < n; ++i) op[i] = xp[i] + yp[i];

  if (detail::track<T>({&x, &y})) {
    auto xn = x.node(), yn = y.node();
    detail::attach<T>(out, {xn, yn}, [=](Node<T>& self) {
      const T* dy = self.grad.data();
      for (auto* node : {xn.get(), yn.get()}) {
        if (!node->requires_grad) continue;
        node->ensure_grad();
        T* d = node->grad.data();
        for (int64_t i = 0; i < n; ++i) d[i] += dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& x, const Tensor<T>& y) {
  detail::check(x.rank() == 4 && y.rank() == 4, "concat_channels expects rank-4 tensors");
  detail::check(x.dim(0) == y.dim(0) && x.dim(2) == y.dim(2) && x.dim(3) == y.dim(3),
                "concat_channels expects matching batch and spatial dims");
  const int64_t N = x.dim(0), Cx = x.dim(1), Cy = y.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out = Tensor<T>::zeros({N, Cx + Cy, x.dim(2), x.dim(3)});
  const T* xp = x.values().data();
  const T* yp = y.values().data();
  T* op = out.values().data();
  for (int64_t n = 0; n < N; ++n) {
    std::copy(xp + n * Cx * HW, xp + (n + 1) * Cx * HW, op + n * (Cx + Cy) * HW);
    std::copy(yp + n * Cy * HW, yp + (n + 1) * Cy * HW, op + n * (Cx + Cy) * HW + Cx * HW);
  }

  if (detail::track<T>({&x, &y})) {
    auto xn = x.node(), yn = y.node();
    detail::attach<T>(out, {xn, yn}, [=](Node<T>& self) {
      const T* dy = self.grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        T* dx = xn->grad.data();
        for (int64_t n = 0; n < N; ++n) {
          const T* src = dy + n * (Cx + Cy) * HW;
          T* dst = dx + n * Cx * HW;
          for (int64_t i = 0; i < Cx * HW; ++i) dst[i] += src[i];
        }
      }
      if (yn->requires_grad) {
        yn->ensure_grad();
        T* dyg = yn->grad.data();
        for (int64_t n = 0; n < N; ++n) {
          const T* src = dy + n * (Cx + Cy) * HW + Cx * HW;
          T* dst = dyg + n * Cy * HW;
          for (int64_t i = 0; i < Cy * HW; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros({1});
  double acc = 0;
  for (const T v : x.values()) acc += double(v);
  out.values()[0] = T(acc);
  if (detail::track<T>({&x})) {
    auto xn = x.node();
    detail::attach<T>(out, {xn}, [=](Node<T>& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      const T g = self.grad[0];
      for (auto& d : xn->grad) d += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::check(pred.same_shape(target), "mse_loss expects matching shapes");
  const int64_t n = pred.numel();
  double acc = 0;
  const T* pp = pred.values().data();
  const T* tp = target.values().data();
  for (int64_t i = 0; i < n; ++i) {
    const double d = double(pp[i]) - double(tp[i]);
    acc += d * d;
  }
  Tensor<T> out = Tensor<T>::zeros({1});
  out.values()[0] = T(acc / double(n));

  if (detail::track<T>({&pred, &target})) {
    auto pn = pred.node(), tn = target.node();
    detail::attach<T>(out, {pn, tn}, [=](Node<T>& self) {
      const T g = self.grad[0];
      const T scale = T(2.0 / double(n)) * g;
      if (pn->requires_grad) {
        pn->ensure_grad();
        T* dp = pn->grad.data();
        for (int64_t i = 0; i < n; ++i) dp[i] += scale * (pn->value[size_t(i)] - tn->value[size_t(i)]);
      }
      if (tn->requires_grad) {
        tn->ensure_grad();
        T* dt = tn->grad.data();
        for (int64_t i = 0; i < n; ++i) dt[i] -= scale * (pn->value[size_t(i)] - tn->value[size_t(i)]);
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// Reverse-mode sweep. Internal gradients are reset at the start of every
// sweep; leaf gradients persist and accumulate across sweeps.
// --------------------------------------------------------------------------

template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order: inputs first, root last.
  std::vector<std::pair<Node<T>*, size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void backward(Tensor<T>& loss) {
  detail::check(loss.numel() == 1, "backward expects a scalar loss");
  auto order = topo_order(loss.raw());
  for (Node<T>* node : order) {
    if (node->backward_fn) {
      node->grad.assign(node->value.size(), T(0));  // internal node
    } else if (node->requires_grad) {
      node->ensure_grad();  // leaf: keep accumulated gradient
    }
  }
  loss.raw()->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// --------------------------------------------------------------------------
// Parameters and Adam.
// --------------------------------------------------------------------------

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  std::vector<T> adam_m, adam_v;
};

template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter<T>*> params, double lr = 1e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, double(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, double(step_count_));
    for (Parameter<T>* p : params_) {
      auto& value = p->tensor.values();
      auto& grad = p->tensor.grads();
      if (grad.empty()) continue;  // never touched by backward
      if (p->adam_m.empty()) {
        p->adam_m.assign(value.size(), T(0));
        p->adam_v.assign(value.size(), T(0));
      }
      for (size_t i = 0; i < value.size(); ++i) {
        const double g = double(grad[i]);
        const double m = beta1_ * double(p->adam_m[i]) + (1.0 - beta1_) * g;
        const double v = beta2_ * double(p->adam_v[i]) + (1.0 - beta2_) * g * g;
        p->adam_m[i] = T(m);
        p->adam_v[i] = T(v);
        value[i] = T(double(value[i]) - lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
      }
    }
  }

  void zero_grad() {
    for (Parameter<T>* p : params_) p->tensor.zero_grad();
  }

  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t s) { step_count_ = s; }
  double learning_rate() const { return lr_; }

 private:
  std::vector<Parameter<T>*> params_;
  double lr_, beta1_, beta2_, eps_;
  int64_t step_count_ = 0;
};

}  // namespace dicforge::tc

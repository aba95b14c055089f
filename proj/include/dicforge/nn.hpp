#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dicforge/checkpoint.hpp"
#include "dicforge/tensor.hpp"

// Bayes-DIC-Net: a two-stage encoder (detail extraction at scales 1/2 and
// 1/4, global extraction at 1/8 and 1/16) and a decoder that folds the
// detail-stage features back in through a single fusion-block skip
// connection. All feature blocks are bottlenecked to a quarter of their
// channel count and carry dropout after their spatial convolution, which
// doubles as the Monte-Carlo sampling mechanism at inference time.

namespace dicforge::net {

enum class Mode { Train, Deterministic, MC };

inline bool dropout_active(Mode mode) { return mode != Mode::Deterministic; }

struct NetworkConfig {
  int in_channels = 2;  // reference and deformed images stacked
  std::vector<int> channel_schedule = {32, 64, 128, 256};
  int bottleneck_divisor = 4;
  double dropout_p = 0.1;
  int mc_samples = 8;
  int head_mid_channels = 16;

  void validate() const {
    if (channel_schedule.size() != 4) throw validation_error("channel schedule must list 4 stages");
    for (int c : channel_schedule) {
      if (c % bottleneck_divisor != 0) {
        throw validation_error("stage channel counts must be divisible by the bottleneck divisor");
      }
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw validation_error("dropout_p must be in [0,1)");
    if (mc_samples < 1) throw validation_error("mc_samples must be >= 1");
    if (in_channels < 1 || head_mid_channels < 1) throw validation_error("bad channel config");
  }
};

namespace detail {

// The first Down Block sees the 2-channel input pair, where a strict
// quarter bottleneck would collapse to zero channels; floor at one.
inline int bottleneck(int c, int divisor) { return std::max(1, c / divisor); }

}  // namespace detail

template <typename T>
struct ForwardCtx {
  Mode mode = Mode::Deterministic;
  double dropout_p = 0.0;
  Rng* rng = nullptr;
};

template <typename T>
class ParamBank {
 public:
  explicit ParamBank(uint64_t init_seed) : rng_(init_seed) {}

  tc::Tensor<T> conv_weight(const std::string& name, int64_t co, int64_t ci, int64_t kh, int64_t kw) {
    return weight(name, {co, ci, kh, kw}, double(ci * kh * kw));
  }
  tc::Tensor<T> deconv_weight(const std::string& name, int64_t ci, int64_t co) {
    return weight(name, {ci, co, 2, 2}, double(ci * 4));
  }
  tc::Tensor<T> depthwise_weight(const std::string& name, int64_t c, int64_t kh, int64_t kw) {
    return weight(name, {c, 1, kh, kw}, double(kh * kw));
  }
  tc::Tensor<T> bias(const std::string& name, int64_t c) {
    return constant(name, {c}, T(0));
  }
  tc::Tensor<T> prelu_slope(const std::string& name, int64_t c) {
    return constant(name, {c}, T(0.25));
  }

  std::vector<tc::Parameter<T>>& params() { return params_; }

 private:
  // Kaiming-uniform, leaky-slope sqrt(5) convention (bound = 1/sqrt(fan_in)).
  // The PReLU-matched gain is wrong here: the bottleneck convs have no
  // activation between them, so that gain compounds and the residual adds
  // blow activations up by ~4x per block.
  tc::Tensor<T> weight(const std::string& name, std::vector<int64_t> shape, double fan_in) {
    auto t = tc::Tensor<T>::zeros(std::move(shape));
    const double bound = 1.0 / std::sqrt(fan_in);
    t.fill_uniform(rng_, -bound, bound);
    t.set_requires_grad(true);
    params_.push_back({name, t, {}, {}});
    return t;
  }
  tc::Tensor<T> constant(const std::string& name, std::vector<int64_t> shape, T value) {
    auto t = tc::Tensor<T>::full(std::move(shape), value);
    t.set_requires_grad(true);
    params_.push_back({name, t, {}, {}});
    return t;
  }

  Rng rng_;
  std::vector<tc::Parameter<T>> params_;
};

// --- blocks ----------------------------------------------------------------

template <typename T>
struct DownBlock {
  tc::Tensor<T> pw1_w, pw1_b, conv_w, conv_b, pw2_w, pw2_b, act;
  tc::Tensor<T> proj_w, proj_b;  // defined only when cin != cout

  DownBlock() = default;
  DownBlock(ParamBank<T>& bank, const std::string& prefix, int cin, int cout, int divisor) {
    const int mid = detail::bottleneck(cin, divisor);
    pw1_w = bank.conv_weight(prefix + ".pw1.weight", mid, cin, 1, 1);
    pw1_b = bank.bias(prefix + ".pw1.bias", mid);
    conv_w = bank.conv_weight(prefix + ".conv.weight", mid, mid, 2, 2);
    conv_b = bank.bias(prefix + ".conv.bias", mid);
    pw2_w = bank.conv_weight(prefix + ".pw2.weight", cout, mid, 1, 1);
    pw2_b = bank.bias(prefix + ".pw2.bias", cout);
    if (cin != cout) {
      proj_w = bank.conv_weight(prefix + ".proj.weight", cout, cin, 1, 1);
      proj_b = bank.bias(prefix + ".proj.bias", cout);
    }
    act = bank.prelu_slope(prefix + ".prelu.slope", cout);
  }

  tc::Tensor<T> forward(const tc::Tensor<T>& x, const ForwardCtx<T>&) const {
    if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
      throw validation_error("down block requires even spatial size");
    }
    auto main = tc::conv2d(x, pw1_w, pw1_b, 1, {0, 0});
    main = tc::conv2d(main, conv_w, conv_b, 2, {0, 0});
    main = tc::conv2d(main, pw2_w, pw2_b, 1, {0, 0});
    auto res = tc::maxpool2x2(x);
    if (proj_w.defined()) res = tc::conv2d(res, proj_w, proj_b, 1, {0, 0});
    return tc::prelu(tc::add(main, res), act);
  }
};

template <typename T>
struct UpBlock {
  tc::Tensor<T> pw1_w, pw1_b, deconv_w, deconv_b, pw2_w, pw2_b, act;
  tc::Tensor<T> proj_w, proj_b;

  UpBlock() = default;
  UpBlock(ParamBank<T>& bank, const std::string& prefix, int cin, int cout, int divisor) {
    const int mid = detail::bottleneck(cin, divisor);
    pw1_w = bank.conv_weight(prefix + ".pw1.weight", mid, cin, 1, 1);
    pw1_b = bank.bias(prefix + ".pw1.bias", mid);
    deconv_w = bank.deconv_weight(prefix + ".deconv.weight", mid, mid);
    deconv_b = bank.bias(prefix + ".deconv.bias", mid);
    pw2_w = bank.conv_weight(prefix + ".pw2.weight", cout, mid, 1, 1);
    pw2_b = bank.bias(prefix + ".pw2.bias", cout);
    if (cin != cout) {
      proj_w = bank.conv_weight(prefix + ".proj.weight", cout, cin, 1, 1);
      proj_b = bank.bias(prefix + ".proj.bias", cout);
    }
    act = bank.prelu_slope(prefix + ".prelu.slope", cout);
  }

  tc::Tensor<T> forward(const tc::Tensor<T>& x, const ForwardCtx<T>&) const {
    auto main = tc::conv2d(x, pw1_w, pw1_b, 1, {0, 0});
    main = tc::conv_transpose2d(main, deconv_w, deconv_b);
    main = tc::conv2d(main, pw2_w, pw2_b, 1, {0, 0});
    auto res = tc::upsample_bilinear2x(x);
    if (proj_w.defined()) res = tc::conv2d(res, proj_w, proj_b, 1, {0, 0});
    return tc::prelu(tc::add(main, res), act);
  }
};

template <typename T>
struct SmallBlock {
  tc::Tensor<T> pw1_w, pw1_b, dw_w, pw2_w, pw2_b, act;

  SmallBlock() = default;
  SmallBlock(ParamBank<T>& bank, const std::string& prefix, int c, int divisor) {
    const int mid = detail::bottleneck(c, divisor);
    pw1_w = bank.conv_weight(prefix + ".pw1.weight", mid, c, 1, 1);
    pw1_b = bank.bias(prefix + ".pw1.bias", mid);
    dw_w = bank.depthwise_weight(prefix + ".dw.weight", mid, 3, 3);
    pw2_w = bank.conv_weight(prefix + ".pw2.weight", c, mid, 1, 1);
    pw2_b = bank.bias(prefix + ".pw2.bias", c);
    act = bank.prelu_slope(prefix + ".prelu.slope", c);
  }

  tc::Tensor<T> forward(const tc::Tensor<T>& x, const ForwardCtx<T>& ctx) const {
    auto t = tc::conv2d(x, pw1_w, pw1_b, 1, {0, 0});
    t = tc::depthwise_conv2d(t, dw_w, 1, {1, 1});
    if (dropout_active(ctx.mode) && ctx.dropout_p > 0) {
      t = tc::dropout(t, ctx.dropout_p, true, *ctx.rng);
    }
    t = tc::conv2d(t, pw2_w, pw2_b, 1, {0, 0});
    return tc::prelu(tc::add(t, x), act);
  }
};

template <typename T>
struct WideBlock {
  tc::Tensor<T> pw1_w, pw1_b, conv51_w, conv51_b, conv15_w, conv15_b, pw2_w, pw2_b, act;

  WideBlock() = default;
  WideBlock(ParamBank<T>& bank, const std::string& prefix, int c, int divisor) {
    const int mid = detail::bottleneck(c, divisor);
    pw1_w = bank.conv_weight(prefix + ".pw1.weight", mid, c, 1, 1);
    pw1_b = bank.bias(prefix + ".pw1.bias", mid);
    conv51_w = bank.conv_weight(prefix + ".conv5x1.weight", mid, mid, 5, 1);
    conv51_b = bank.bias(prefix + ".conv5x1.bias", mid);
    conv15_w = bank.conv_weight(prefix + ".conv1x5.weight", mid, mid, 1, 5);
    conv15_b = bank.bias(prefix + ".conv1x5.bias", mid);
    pw2_w = bank.conv_weight(prefix + ".pw2.weight", c, mid, 1, 1);
    pw2_b = bank.bias(prefix + ".pw2.bias", c);
    act = bank.prelu_slope(prefix + ".prelu.slope", c);
  }

  tc::Tensor<T> forward(const tc::Tensor<T>& x, const ForwardCtx<T>& ctx) const {
    auto t = tc::conv2d(x, pw1_w, pw1_b, 1, {0, 0});
    t = tc::conv2d(t, conv51_w, conv51_b, 1, {2, 0});
    t = tc::conv2d(t, conv15_w, conv15_b, 1, {0, 2});
    if (dropout_active(ctx.mode) && ctx.dropout_p > 0) {
      t = tc::dropout(t, ctx.dropout_p, true, *ctx.rng);
    }
    t = tc::conv2d(t, pw2_w, pw2_b, 1, {0, 0});
    return tc::prelu(tc::add(t, x), act);
  }
};

template <typename T>
struct FusionBlock {
  tc::Tensor<T> dw_w, pw_w, pw_b;
  SmallBlock<T> small;

  FusionBlock() = default;
  FusionBlock(ParamBank<T>& bank, const std::string& prefix, int c, int divisor)
      : small(bank, prefix + ".small", c, divisor) {
    dw_w = bank.depthwise_weight(prefix + ".dw.weight", 2 * c, 3, 3);
    pw_w = bank.conv_weight(prefix + ".pw.weight", c, 2 * c, 1, 1);
    pw_b = bank.bias(prefix + ".pw.bias", c);
  }

  tc::Tensor<T> forward(const tc::Tensor<T>& up_feat, const tc::Tensor<T>& detail_feat,
                        const ForwardCtx<T>& ctx) const {
    auto t = tc::concat_channels(up_feat, detail_feat);
    t = tc::depthwise_conv2d(t, dw_w, 1, {1, 1});
    t = tc::conv2d(t, pw_w, pw_b, 1, {0, 0});
    return small.forward(t, ctx);
  }
};

template <typename T>
struct PredictionHead {
  tc::Tensor<T> deconv_w, deconv_b, pw_w, pw_b, conv_w, conv_b;

  PredictionHead() = default;
  PredictionHead(ParamBank<T>& bank, const std::string& prefix, int cin, int mid, int cout) {
    deconv_w = bank.deconv_weight(prefix + ".deconv.weight", cin, mid);
    deconv_b = bank.bias(prefix + ".deconv.bias", mid);
    pw_w = bank.conv_weight(prefix + ".pw.weight", mid, mid, 1, 1);
    pw_b = bank.bias(prefix + ".pw.bias", mid);
    conv_w = bank.conv_weight(prefix + ".conv.weight", cout, mid, 3, 3);
    conv_b = bank.bias(prefix + ".conv.bias", cout);
  }

  tc::Tensor<T> forward(const tc::Tensor<T>& x, const ForwardCtx<T>&) const {
    auto t = tc::conv_transpose2d(x, deconv_w, deconv_b);
    t = tc::conv2d(t, pw_w, pw_b, 1, {0, 0});
    return tc::conv2d(t, conv_w, conv_b, 1, {1, 1});  // regression output, no activation
  }
};

// --- the full network --------------------------------------------------------

template <typename T>
class BayesDicNet {
 public:
  explicit BayesDicNet(NetworkConfig cfg = {}, uint64_t init_seed = 0x5EED)
      : cfg_(validated(cfg)), bank_(init_seed) {
    const auto& ch = cfg_.channel_schedule;
    const int div = cfg_.bottleneck_divisor;
    d1_down_ = DownBlock<T>(bank_, "d1.down", cfg_.in_channels, ch[0], div);
    d1_small_ = SmallBlock<T>(bank_, "d1.small", ch[0], div);
    d1_wide_ = WideBlock<T>(bank_, "d1.wide", ch[0], div);
    d2_down_ = DownBlock<T>(bank_, "d2.down", ch[0], ch[1], div);
    d2_small_ = SmallBlock<T>(bank_, "d2.small", ch[1], div);
    d2_wide_ = WideBlock<T>(bank_, "d2.wide", ch[1], div);
    g1_down_ = DownBlock<T>(bank_, "g1.down", ch[1], ch[2], div);
    g1_small1_ = SmallBlock<T>(bank_, "g1.small1", ch[2], div);
    g1_small2_ = SmallBlock<T>(bank_, "g1.small2", ch[2], div);
    g1_wide1_ = WideBlock<T>(bank_, "g1.wide1", ch[2], div);
    g1_wide2_ = WideBlock<T>(bank_, "g1.wide2", ch[2], div);
    g2_down_ = DownBlock<T>(bank_, "g2.down", ch[2], ch[3], div);
    g2_small1_ = SmallBlock<T>(bank_, "g2.small1", ch[3], div);
    g2_small2_ = SmallBlock<T>(bank_, "g2.small2", ch[3], div);
    g2_wide1_ = WideBlock<T>(bank_, "g2.wide1", ch[3], div);
    g2_wide2_ = WideBlock<T>(bank_, "g2.wide2", ch[3], div);
    u1_up_ = UpBlock<T>(bank_, "u1.up", ch[3], ch[2], div);
    u1_small_ = SmallBlock<T>(bank_, "u1.small", ch[2], div);
    u1_wide_ = WideBlock<T>(bank_, "u1.wide", ch[2], div);
    u2_up_ = UpBlock<T>(bank_, "u2.up", ch[2], ch[1], div);
    u2_fusion_ = FusionBlock<T>(bank_, "u2.fusion", ch[1], div);
    u2_wide_ = WideBlock<T>(bank_, "u2.wide", ch[1], div);
    u3_up_ = UpBlock<T>(bank_, "u3.up", ch[1], ch[0], div);
    u3_small_ = SmallBlock<T>(bank_, "u3.small", ch[0], div);
    u3_wide_ = WideBlock<T>(bank_, "u3.wide", ch[0], div);
    head_ = PredictionHead<T>(bank_, "head", ch[0], cfg_.head_mid_channels, 2);
  }

  // Blocks and the parameter bank share tensor nodes; a copy would alias
  // the original's weights.
  BayesDicNet(const BayesDicNet&) = delete;
  BayesDicNet& operator=(const BayesDicNet&) = delete;
  BayesDicNet(BayesDicNet&&) = default;
  BayesDicNet& operator=(BayesDicNet&&) = default;

  const NetworkConfig& config() const { return cfg_; }

  std::vector<tc::Parameter<T>*> parameters() {
    std::vector<tc::Parameter<T>*> out;
    out.reserve(bank_.params().size());
    for (auto& p : bank_.params()) out.push_back(&p);
    return out;
  }

  int64_t parameter_count() {
    int64_t n = 0;
    for (auto& p : bank_.params()) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : bank_.params()) p.tensor.zero_grad();
  }

  /// Full forward pass on a stacked (N, 2, H, W) input. `rng` drives the
  /// dropout masks and is required unless mode is Deterministic.
  tc::Tensor<T> forward(const tc::Tensor<T>& input, Mode mode, Rng* rng = nullptr) const {
    if (input.rank() != 4 || input.dim(1) != cfg_.in_channels) {
      throw validation_error("forward expects (N, in_channels, H, W) input");
    }
    if (input.dim(2) % 16 != 0 || input.dim(3) % 16 != 0) {
      throw validation_error("spatial size must be divisible by 16");
    }
    if (mode != Mode::Deterministic && cfg_.dropout_p > 0 && rng == nullptr) {
      throw validation_error("dropout needs an rng in train/mc mode");
    }
    ForwardCtx<T> ctx{mode, cfg_.dropout_p, rng};

    tc::Tensor<T> x = input, skip;
    {
      tc::StageScope s(0);
      x = d1_wide_.forward(d1_small_.forward(d1_down_.forward(x, ctx), ctx), ctx);
    }
    {
      tc::StageScope s(1);
      x = d2_wide_.forward(d2_small_.forward(d2_down_.forward(x, ctx), ctx), ctx);
      skip = x;  // sole skip connection: detail features at 1/4 scale
    }
    {
      tc::StageScope s(2);
      x = g1_down_.forward(x, ctx);
      x = g1_small2_.forward(g1_small1_.forward(x, ctx), ctx);
      x = g1_wide2_.forward(g1_wide1_.forward(x, ctx), ctx);
    }
    {
      tc::StageScope s(3);
      x = g2_down_.forward(x, ctx);
      x = g2_small2_.forward(g2_small1_.forward(x, ctx), ctx);
      x = g2_wide2_.forward(g2_wide1_.forward(x, ctx), ctx);
    }
    {
      tc::StageScope s(4);
      x = u1_wide_.forward(u1_small_.forward(u1_up_.forward(x, ctx), ctx), ctx);
    }
    {
      tc::StageScope s(5);
      x = u2_up_.forward(x, ctx);
      x = u2_fusion_.forward(x, skip, ctx);
      x = u2_wide_.forward(x, ctx);
    }
    {
      tc::StageScope s(6);
      x = u3_wide_.forward(u3_small_.forward(u3_up_.forward(x, ctx), ctx), ctx);
    }
    tc::StageScope s(7);
    return head_.forward(x, ctx);
  }

  /// Stacks a reference/deformed pair (each (N,1,H,W)) into the 2-channel
  /// input and runs forward.
  tc::Tensor<T> forward_pair(const tc::Tensor<T>& ref, const tc::Tensor<T>& def, Mode mode,
                             Rng* rng = nullptr) const {
    if (!ref.same_shape(def)) throw validation_error("ref/def shapes differ");
    return forward(tc::concat_channels(ref, def), mode, rng);
  }

  // Individual blocks, exposed for contract tests (receptive fields,
  // residual identities).
  const DownBlock<T>& d1_down() const { return d1_down_; }
  const SmallBlock<T>& d1_small() const { return d1_small_; }
  const WideBlock<T>& d1_wide() const { return d1_wide_; }
  const FusionBlock<T>& u2_fusion() const { return u2_fusion_; }
  const PredictionHead<T>& head() const { return head_; }

  ckpt::Checkpoint to_checkpoint(const tc::AdamOptimizer<T>* opt = nullptr) {
    ckpt::Checkpoint out;
    for (auto& p : bank_.params()) {
      out.params.push_back(to_record(p.name, p.tensor.shape(), p.tensor.values()));
    }
    if (opt) {
      out.adam_step = uint64_t(opt->step_count());
      for (auto& p : bank_.params()) {
        if (p.adam_m.empty()) {
          p.adam_m.assign(p.tensor.values().size(), T(0));
          p.adam_v.assign(p.tensor.values().size(), T(0));
        }
        out.adam.push_back(to_record(p.name + ".m", p.tensor.shape(), p.adam_m));
        out.adam.push_back(to_record(p.name + ".v", p.tensor.shape(), p.adam_v));
      }
    }
    return out;
  }

  /// Loads parameter values (and Adam moments when present) by name.
  /// Returns the stored Adam step count.
  uint64_t load_checkpoint(const ckpt::Checkpoint& ck) {
    std::map<std::string, const ckpt::TensorRecord*> by_name;
    for (const auto& r : ck.params) by_name[r.name] = &r;
    for (auto& p : bank_.params()) {
      auto it = by_name.find(p.name);
      if (it == by_name.end()) throw validation_error("checkpoint missing parameter " + p.name);
      copy_record(*it->second, p.tensor.shape(), p.tensor.values());
      by_name.erase(it);
    }
    if (!by_name.empty()) {
      throw validation_error("checkpoint has unknown parameter " + by_name.begin()->first);
    }
    if (!ck.adam.empty()) {
      std::map<std::string, const ckpt::TensorRecord*> adam;
      for (const auto& r : ck.adam) adam[r.name] = &r;
      for (auto& p : bank_.params()) {
        const auto m = adam.find(p.name + ".m");
        const auto v = adam.find(p.name + ".v");
        if (m == adam.end() || v == adam.end()) {
          throw validation_error("checkpoint missing Adam state for " + p.name);
        }
        p.adam_m.resize(p.tensor.values().size());
        p.adam_v.resize(p.tensor.values().size());
        copy_record(*m->second, p.tensor.shape(), p.adam_m);
        copy_record(*v->second, p.tensor.shape(), p.adam_v);
      }
    }
    return ck.adam_step;
  }

 private:
  static NetworkConfig validated(NetworkConfig cfg) {
    cfg.validate();
    return cfg;
  }

  static ckpt::TensorRecord to_record(const std::string& name, const std::vector<int64_t>& dims,
                                      const std::vector<T>& data) {
    ckpt::TensorRecord r;
    r.name = name;
    r.dims = dims;
    r.data.reserve(data.size());
    for (const T v : data) r.data.push_back(float(v));
    return r;
  }

  static void copy_record(const ckpt::TensorRecord& r, const std::vector<int64_t>& dims,
                          std::vector<T>& dst) {
    if (r.dims != dims) throw validation_error("checkpoint shape mismatch for " + r.name);
    if (r.data.size() != dst.size()) throw validation_error("checkpoint size mismatch for " + r.name);
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = T(r.data[i]);
  }

  NetworkConfig cfg_;
  ParamBank<T> bank_;

  DownBlock<T> d1_down_, d2_down_, g1_down_, g2_down_;
  SmallBlock<T> d1_small_, d2_small_, g1_small1_, g1_small2_, g2_small1_, g2_small2_;
  SmallBlock<T> u1_small_, u3_small_;
  WideBlock<T> d1_wide_, d2_wide_, g1_wide1_, g1_wide2_, g2_wide1_, g2_wide2_;
  WideBlock<T> u1_wide_, u2_wide_, u3_wide_;
  UpBlock<T> u1_up_, u2_up_, u3_up_;
  FusionBlock<T> u2_fusion_;
  PredictionHead<T> head_;
};

// --- Monte-Carlo dropout inference -------------------------------------------

template <typename T>
struct UncertaintyOutput {
  tc::Tensor<T> mean;      // (N, 2, H, W)
  tc::Tensor<T> variance;  // (N, 2, H, W), population variance over samples
  int samples = 0;
};

/// Runs `samples` stochastic forward passes with dropout active; replica r
/// draws its masks from an independent stream seeded by (seed, r). The mean
/// and variance are accumulated in double, so with p = 0 the mean matches
/// the deterministic forward bit-for-bit and the variance is exactly zero.
template <typename T>
UncertaintyOutput<T> mc_infer(const BayesDicNet<T>& model, const tc::Tensor<T>& input, int samples,
                              uint64_t seed) {
  if (samples < 1) throw validation_error("mc_infer needs at least one sample");
  tc::NoGradGuard guard;

  std::vector<std::vector<T>> outputs;
  outputs.reserve(size_t(samples));
  std::vector<int64_t> shape;
  for (int r = 0; r < samples; ++r) {
    Rng rng(splitmix_at(seed, uint64_t(r)));
    auto out = model.forward(input, Mode::MC, &rng);
    if (r == 0) shape = out.shape();
    outputs.push_back(std::move(out.values()));
  }

  UncertaintyOutput<T> result;
  result.samples = samples;
  result.mean = tc::Tensor<T>::zeros(shape);
  result.variance = tc::Tensor<T>::zeros(shape);
  const size_t n = result.mean.values().size();
  for (size_t i = 0; i < n; ++i) {
    double acc = 0;
    for (const auto& o : outputs) acc += double(o[i]);
    const double mean = acc / samples;
    double var = 0;
    for (const auto& o : outputs) {
      const double d = double(o[i]) - mean;
      var += d * d;
    }
    result.mean.values()[i] = T(mean);
    result.variance.values()[i] = T(var / samples);
  }
  return result;
}

}  // namespace dicforge::net

#include "dicforge/train.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "dicforge/warp.hpp"

namespace dicforge::net {

namespace {

std::vector<float> crop_plane(const Grid<float>& g, int crop) {
  const Grid<float> c = crop > 0 && crop != g.height() ? warp::center_crop_to(g, crop) : g;
  return {c.data(), c.data() + c.size()};
}

}  // namespace

LoadedSample to_loaded_sample(const data::Sample& sample, int crop) {
  const int native = sample.reference.height();
  const int size = crop > 0 ? crop : native;
  LoadedSample out;
  out.size = size;
  out.reference = crop_plane(sample.reference, size);
  out.deformed = crop_plane(sample.deformed, size);
  out.u = crop_plane(sample.field.u.values, size);
  out.v = crop_plane(sample.field.v.values, size);
  return out;
}

DataView DataView::load(const std::filesystem::path& dir, bool train_split, int crop,
                        size_t limit) {
  const data::DatasetManifest manifest = data::read_manifest(dir);
  const size_t begin = train_split ? 0 : manifest.train_count;
  const size_t end = train_split ? manifest.train_count : manifest.sample_count;
  DataView view;
  for (size_t i = begin; i < end; ++i) {
    if (limit > 0 && view.samples_.size() >= limit) break;
    const data::Sample sample = data::read_sample(dir, manifest.samples.at(i));
    view.samples_.push_back(to_loaded_sample(sample, crop));
  }
  if (view.samples_.empty()) throw validation_error("requested split is empty");
  return view;
}

DataView DataView::from_samples(std::vector<LoadedSample> samples) {
  if (samples.empty()) throw validation_error("no samples");
  DataView view;
  view.samples_ = std::move(samples);
  return view;
}

std::pair<tc::Tensor<float>, tc::Tensor<float>> DataView::batch(
    const std::vector<size_t>& indices) const {
  const int64_t B = int64_t(indices.size());
  const int64_t S = size();
  auto input = tc::Tensor<float>::zeros({B, 2, S, S});
  auto target = tc::Tensor<float>::zeros({B, 2, S, S});
  const int64_t plane = S * S;
  for (int64_t b = 0; b < B; ++b) {
    const LoadedSample& s = samples_.at(indices[size_t(b)]);
    std::copy(s.reference.begin(), s.reference.end(), input.values().begin() + b * 2 * plane);
    std::copy(s.deformed.begin(), s.deformed.end(), input.values().begin() + (b * 2 + 1) * plane);
    std::copy(s.u.begin(), s.u.end(), target.values().begin() + b * 2 * plane);
    std::copy(s.v.begin(), s.v.end(), target.values().begin() + (b * 2 + 1) * plane);
  }
  return {input, target};
}

Trainer::Trainer(BayesDicNet<float>& model, DataView data, TrainConfig cfg)
    : model_(model), data_(std::move(data)), cfg_(std::move(cfg)),
      opt_(model.parameters(), cfg_.lr) {
  if (cfg_.batch < 1) throw validation_error("batch size must be >= 1");
  if (!cfg_.resume_from.empty()) {
    const uint64_t step = model_.load_checkpoint(ckpt::read_dicm(cfg_.resume_from.string()));
    opt_.set_step_count(int64_t(step));
    const int64_t steps_per_epoch =
        (int64_t(data_.count()) + cfg_.batch - 1) / cfg_.batch;
    start_epoch_ = int(int64_t(step) / steps_per_epoch);
  }
}

std::vector<size_t> Trainer::epoch_order(int epoch) const {
  std::vector<size_t> order(data_.count());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Fisher-Yates from a per-epoch stream: the shuffle is a pure function
  // of (seed, epoch), which keeps resumed runs on the same schedule.
  Rng rng(splitmix_at(cfg_.seed ^ 0x5348554646ULL, uint64_t(epoch)));
  for (size_t i = order.size(); i > 1; --i) {
    const size_t j = size_t(rng.uniform_int(0, i - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::vector<EpochStats> Trainer::run(const std::function<bool(const EpochStats&)>& stop) {
  std::ofstream log;
  if (!cfg_.log_path.empty()) {
    log.open(cfg_.log_path, start_epoch_ > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw io_error("cannot open training log " + cfg_.log_path.string());
  }

  std::vector<EpochStats> history;
  for (int epoch = start_epoch_; epoch < cfg_.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<size_t> order = epoch_order(epoch);

    double loss_sum = 0;
    int64_t batches = 0;
    for (size_t pos = 0; pos < order.size(); pos += size_t(cfg_.batch)) {
      const size_t count = std::min(size_t(cfg_.batch), order.size() - pos);
      std::vector<size_t> indices(order.begin() + pos, order.begin() + pos + count);
      auto [input, target] = data_.batch(indices);

      // Dropout masks derive from (seed, global step): reproducible and
      // resume-stable.
      Rng dropout_rng(splitmix_at(cfg_.seed ^ 0x44524F50ULL, uint64_t(opt_.step_count())));
      auto pred = model_.forward(input, Mode::Train, &dropout_rng);
      auto loss = tc::mse_loss(pred, target);

      model_.zero_grad();
      tc::backward(loss);
      opt_.step();

      loss_sum += double(loss.values()[0]);
      ++batches;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.steps = opt_.step_count();
    stats.mean_loss = loss_sum / double(batches);
    stats.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    history.push_back(stats);

    if (log) {
      nlohmann::json line;
      line["epoch"] = stats.epoch;
      line["step"] = stats.steps;
      line["loss"] = stats.mean_loss;
      line["wall_ms"] = stats.wall_ms;
      log << line.dump() << "\n" << std::flush;
    }
    if (cfg_.verbose) {
      std::printf("epoch %d  step %lld  loss %.6f  (%.0f ms)\n", stats.epoch,
                  static_cast<long long>(stats.steps), stats.mean_loss, stats.wall_ms);
      std::fflush(stdout);
    }

    const bool last = epoch + 1 == cfg_.epochs;
    if (!cfg_.ckpt_path.empty() &&
        (last || (cfg_.ckpt_every > 0 && (epoch + 1) % cfg_.ckpt_every == 0))) {
      ckpt::write_dicm(cfg_.ckpt_path.string(), model_.to_checkpoint(&opt_));
    }
    if (stop && stop(stats)) {
      if (!cfg_.ckpt_path.empty()) {
        ckpt::write_dicm(cfg_.ckpt_path.string(), model_.to_checkpoint(&opt_));
      }
      break;
    }
  }
  return history;
}

double Trainer::train_mae() {
  const auto fields = predict_fields(model_, data_, cfg_.batch);
  double acc = 0;
  size_t n = 0;
  for (size_t i = 0; i < data_.count(); ++i) {
    const LoadedSample& s = data_.sample(i);
    const auto& f = fields[i];
    for (int y = 0; y < f.u.height(); ++y) {
      for (int x = 0; x < f.u.width(); ++x) {
        acc += std::abs(double(f.u.values.at(y, x)) - double(s.u[size_t(y) * s.size + x]));
        acc += std::abs(double(f.v.values.at(y, x)) - double(s.v[size_t(y) * s.size + x]));
        n += 2;
      }
    }
  }
  return acc / double(n);
}

eval::MetricsReport Trainer::evaluate(const DataView& view) {
  const auto preds = predict_fields(model_, view, cfg_.batch);
  std::vector<eval::DisplacementField> gts;
  for (size_t i = 0; i < view.count(); ++i) {
    const LoadedSample& s = view.sample(i);
    eval::DisplacementField gt;
    gt.u.values = Grid<float>(s.size, s.size);
    gt.v.values = Grid<float>(s.size, s.size);
    std::copy(s.u.begin(), s.u.end(), gt.u.values.data());
    std::copy(s.v.begin(), s.v.end(), gt.v.values.data());
    gts.push_back(std::move(gt));
  }
  return eval::avg_error(preds, gts);
}

std::vector<eval::DisplacementField> predict_fields(const BayesDicNet<float>& model,
                                                    const DataView& view, int batch) {
  tc::NoGradGuard guard;
  std::vector<eval::DisplacementField> out;
  const int S = view.size();
  for (size_t pos = 0; pos < view.count(); pos += size_t(batch)) {
    const size_t count = std::min(size_t(batch), view.count() - pos);
    std::vector<size_t> indices(count);
    for (size_t i = 0; i < count; ++i) indices[i] = pos + i;
    auto [input, target] = view.batch(indices);
    auto pred = model.forward(input, Mode::Deterministic);
    const int64_t plane = int64_t(S) * S;
    for (size_t b = 0; b < count; ++b) {
      eval::DisplacementField f;
      f.u.values = Grid<float>(S, S);
      f.v.values = Grid<float>(S, S);
      const float* base = pred.values().data() + int64_t(b) * 2 * plane;
      std::copy(base, base + plane, f.u.values.data());
      std::copy(base + plane, base + 2 * plane, f.v.values.data());
      out.push_back(std::move(f));
    }
  }
  return out;
}

}  // namespace dicforge::net

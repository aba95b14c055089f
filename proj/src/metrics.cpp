#include "dicforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "dicforge/png_io.hpp"

namespace dicforge::eval {

namespace {

double plane_mae(const Grid<float>& a, const Grid<float>& b) {
  double acc = 0;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) acc += std::abs(double(a.at(y, x)) - double(b.at(y, x)));
  }
  return acc / (double(a.height()) * a.width());
}

void check_same_size(const Grid<float>& a, const Grid<float>& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw validation_error("grid shapes differ");
  }
}

MapRender normalize(MapKind kind, Grid<float> values, double clamp_ceiling) {
  MapRender render;
  render.kind = kind;
  render.clamp_ceiling = clamp_ceiling;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int y = 0; y < values.height(); ++y) {
    for (int x = 0; x < values.width(); ++x) {
      lo = std::min(lo, double(values.at(y, x)));
      hi = std::max(hi, double(values.at(y, x)));
    }
  }
  render.raw_min = lo;
  render.raw_max = hi;
  if (hi <= lo) {
    // Constant map: nothing to scale, render zeros and keep the metadata.
    render.degenerate = true;
    render.data = Grid<float>(values.height(), values.width(), 0.f);
    return render;
  }
  const double inv = 1.0 / (hi - lo);
  for (int y = 0; y < values.height(); ++y) {
    for (int x = 0; x < values.width(); ++x) {
      values.at(y, x) = float((double(values.at(y, x)) - lo) * inv);
    }
  }
  render.data = std::move(values);
  return render;
}

}  // namespace

MetricsReport avg_error(const std::vector<DisplacementField>& preds,
                        const std::vector<DisplacementField>& gts) {
  if (preds.size() != gts.size()) throw validation_error("pair counts differ");
  if (preds.empty()) throw validation_error("no pairs to evaluate");

  MetricsReport report;
  report.pair_count = preds.size();
  double sum_u = 0, sum_v = 0;
  size_t pixels = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    check_same_size(preds[i].u.values, gts[i].u.values);
    check_same_size(preds[i].v.values, gts[i].v.values);
    const double mu = plane_mae(preds[i].u.values, gts[i].u.values);
    const double mv = plane_mae(preds[i].v.values, gts[i].v.values);
    report.per_pair.emplace_back(mu, mv);
    const size_t n = preds[i].u.values.size();
    sum_u += mu * double(n);
    sum_v += mv * double(n);
    pixels += n;
    report.max_avg_error_u = std::max(report.max_avg_error_u, mu);
    report.max_avg_error_v = std::max(report.max_avg_error_v, mv);
  }
  report.avg_error_u = sum_u / double(pixels);
  report.avg_error_v = sum_v / double(pixels);
  return report;
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [u, v] : report.per_pair) pairs.push_back({{"u", u}, {"v", v}});
  nlohmann::json root;
  root["avg_error_u"] = report.avg_error_u;
  root["avg_error_v"] = report.avg_error_v;
  root["max_avg_error_u"] = report.max_avg_error_u;
  root["max_avg_error_v"] = report.max_avg_error_v;
  root["pair_count"] = report.pair_count;
  root["per_pair"] = pairs;
  return root.dump(2) + "\n";
}

MapRender error_map(const Grid<float>& pred, const Grid<float>& gt) {
  check_same_size(pred, gt);
  Grid<float> diff(pred.height(), pred.width());
  for (int y = 0; y < pred.height(); ++y) {
    for (int x = 0; x < pred.width(); ++x) {
      diff.at(y, x) = std::abs(pred.at(y, x) - gt.at(y, x));
    }
  }
  return normalize(MapKind::Error, std::move(diff), 0.0);
}

MapRender variance_map(const Grid<float>& var, double clamp) {
  if (!(clamp > 0)) throw validation_error("clamp ceiling must be positive");
  Grid<float> clipped(var.height(), var.width());
  for (int y = 0; y < var.height(); ++y) {
    for (int x = 0; x < var.width(); ++x) {
      clipped.at(y, x) = float(std::min(double(var.at(y, x)), clamp));
    }
  }
  return normalize(MapKind::Variance, std::move(clipped),
                   std::isfinite(clamp) ? clamp : 0.0);
}

MapRender field_map(const Grid<float>& field) {
  return normalize(MapKind::Field, field, 0.0);
}

void write_map_png(const std::string& path, const MapRender& render) {
  const char* kind = render.kind == MapKind::Error     ? "error"
                     : render.kind == MapKind::Variance ? "variance"
                                                        : "field";
  std::map<std::string, std::string> text{
      {"dicforge:kind", kind},
      {"dicforge:raw_min", std::to_string(render.raw_min)},
      {"dicforge:raw_max", std::to_string(render.raw_max)},
      {"dicforge:degenerate", render.degenerate ? "1" : "0"},
  };
  if (render.clamp_ceiling > 0) {
    text["dicforge:clamp_ceiling"] = std::to_string(render.clamp_ceiling);
  }
  png::write_gray8(path, render.data, text);
}

double spearman(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw validation_error("spearman inputs differ in length");
  if (a.size() < 2) throw validation_error("spearman needs at least 2 values");

  auto ranks = [](const std::vector<float>& v) {
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    size_t distinct = 0;
    while (i < idx.size()) {
      size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (double(i) + double(j)) + 1.0;  // average 1-based rank
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      ++distinct;
      i = j + 1;
    }
    if (distinct < 2) throw validation_error("spearman input has fewer than 2 distinct values");
    return r;
  };

  const std::vector<double> ra = ranks(a);
  const std::vector<double> rb = ranks(b);
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - ma;
    const double db = rb[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  return cov / std::sqrt(va * vb);
}

AssociationReport variance_error_association(
    const std::vector<std::pair<Grid<float>, Grid<float>>>& var_maps,
    const std::vector<std::pair<Grid<float>, Grid<float>>>& err_maps) {
  if (var_maps.size() != err_maps.size()) throw validation_error("pair counts differ");
  if (var_maps.empty()) throw validation_error("no pairs");

  AssociationReport report;
  for (size_t i = 0; i < var_maps.size(); ++i) {
    auto flatten = [](const std::pair<Grid<float>, Grid<float>>& maps) {
      std::vector<float> v;
      v.reserve(maps.first.size() + maps.second.size());
      v.insert(v.end(), maps.first.data(), maps.first.data() + maps.first.size());
      v.insert(v.end(), maps.second.data(), maps.second.data() + maps.second.size());
      return v;
    };
    report.per_pair.push_back(spearman(flatten(var_maps[i]), flatten(err_maps[i])));
  }
  for (const double rho : report.per_pair) report.mean_rho += rho;
  report.mean_rho /= double(report.per_pair.size());
  return report;
}

}  // namespace dicforge::eval

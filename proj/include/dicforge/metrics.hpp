#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dicforge/bspline.hpp"
#include "dicforge/common.hpp"

namespace dicforge::eval {

using bspline::DisplacementField;

/// Dataset-level displacement error report. avg pools the absolute error
/// over every pixel of every pair; max_avg is the worst per-pair mean.
struct MetricsReport {
  double avg_error_u = 0;
  double avg_error_v = 0;
  double max_avg_error_u = 0;
  double max_avg_error_v = 0;
  std::vector<std::pair<double, double>> per_pair;  // (u MAE, v MAE)
  size_t pair_count = 0;
};

MetricsReport avg_error(const std::vector<DisplacementField>& preds,
                        const std::vector<DisplacementField>& gts);

std::string metrics_to_json(const MetricsReport& report);

enum class MapKind { Error, Variance, Field };

/// A grid prepared for rendering: values min-max normalized into [0,1],
/// raw range (and clamp ceiling, for variance maps) kept as metadata.
/// A constant input renders as zeros with degenerate = true.
struct MapRender {
  MapKind kind = MapKind::Field;
  Grid<float> data;
  double raw_min = 0;
  double raw_max = 0;
  double clamp_ceiling = 0;  // 0 = no clamp applied
  bool degenerate = false;
};

/// Per-pixel |pred - gt| for one displacement direction.
MapRender error_map(const Grid<float>& pred, const Grid<float>& gt);

/// Variance render: values are truncated at `clamp` before normalization.
/// Pass an infinite clamp for plain normalization.
MapRender variance_map(const Grid<float>& var, double clamp = 0.02);

/// Direct min-max render of a displacement (or any scalar) field.
MapRender field_map(const Grid<float>& field);

/// 8-bit PNG with normalization metadata embedded as tEXt chunks.
void write_map_png(const std::string& path, const MapRender& render);

/// Spearman rank correlation with average ranks on ties.
/// Throws validation_error when either input has fewer than 2 distinct values.
double spearman(const std::vector<float>& a, const std::vector<float>& b);

struct AssociationReport {
  double mean_rho = 0;
  std::vector<double> per_pair;
};

/// Rank correlation between flattened variance and absolute-error values,
/// one rho per pair (u and v planes pooled), averaged over pairs.
AssociationReport variance_error_association(
    const std::vector<std::pair<Grid<float>, Grid<float>>>& var_maps,
    const std::vector<std::pair<Grid<float>, Grid<float>>>& err_maps);

}  // namespace dicforge::eval

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "brainenc/dataset.hpp"
#include "brainenc/prediction.hpp"
#include "json.hpp"

namespace brainenc::eval {

/// Two-pass Pearson correlation of each column, accumulated in double.
/// Columns where either side has variance below 1e-12 score 0.
template <typename T>
std::vector<double> pearson_per_vertex(const nd::Tensor<T>& pred, const nd::Tensor<T>& gt);

/// Noise-normalized accuracy: mean over vertices of r^2 / nc, with zero
/// noise-ceiling entries counted as 1.
double metric_from_r(std::span<const double> r, std::span<const double> nc);

template <typename T>
double metric_m(const nd::Tensor<T>& pred, const nd::Tensor<T>& gt, std::span<const double> nc);

std::vector<double> to_double(std::span<const float> v);

struct HemisphereScore {
  double m = 0.0;
  double median_r = 0.0;
  std::size_t vertices = 0;
  std::map<std::string, double> rois;
};

struct SubjectScore {
  std::size_t id = 0;
  HemisphereScore lh;
  HemisphereScore rh;

  /// Vertex-weighted m over both hemispheres.
  double combined_m() const;
};

struct ScoreReport {
  double overall_m = 0.0;
  std::vector<SubjectScore> subjects;
  nlohmann::json meta = nlohmann::json::object();

  const SubjectScore* find(std::size_t subject) const;
};

/// Scores one hemisphere of one subject, including ROI restrictions.
HemisphereScore score_hemisphere(const nd::Tensor<float>& pred, const nd::Tensor<float>& gt,
                                 const data::SubjectSpec& spec, data::Hemisphere h);

/// Scores every subject in the prediction set against the dataset.
ScoreReport score_report(const PredictionSet& predictions, const data::Dataset& dataset);

nlohmann::json report_to_json(const ScoreReport& report);
ScoreReport report_from_json(const nlohmann::json& j);
/// Aligned plain-text table of the report.
std::string report_table(const ScoreReport& report);

}  // namespace brainenc::eval

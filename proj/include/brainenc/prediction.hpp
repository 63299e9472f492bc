#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "brainenc/dataset.hpp"
#include "json.hpp"

namespace brainenc {

struct SubjectPrediction {
  std::size_t subject = 0;
  std::vector<std::size_t> records;  // dataset record index of each row
  nd::Tensor<float> lh;              // records x lh_vertices
  nd::Tensor<float> rh;              // records x rh_vertices

  const nd::Tensor<float>& hemisphere(data::Hemisphere h) const { return h == data::Hemisphere::lh ? lh : rh; }
};

/// Predicted responses for one split, the unit that evaluate and ensemble
/// consume. Stored as predictions.json plus one NENC array per subject and
/// hemisphere.
struct PredictionSet {
  std::string model_id;
  data::Split split = data::Split::val;
  data::FoldSpec folds;
  std::vector<SubjectPrediction> subjects;
  nlohmann::json provenance = nlohmann::json::object();

  const SubjectPrediction* find(std::size_t subject) const;
};

void save_predictions(const PredictionSet& set, const std::filesystem::path& dir);
PredictionSet load_predictions(const std::filesystem::path& dir);

/// Checks every subject against the dataset: known subject, records equal to
/// the split's record list, shapes equal to the subject's vertex counts.
void validate_predictions(const PredictionSet& set, const data::Dataset& dataset);

}  // namespace brainenc

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "brainenc/dataset.hpp"
#include "brainenc/prediction.hpp"
#include "json.hpp"

namespace brainenc::ens {

enum class WeightMode { uniform, score, explicit_weights };

std::string to_string(WeightMode m);
WeightMode parse_weight_mode(const std::string& s);

using Key = std::pair<std::size_t, data::Hemisphere>;

struct Member {
  std::filesystem::path predictions;
  /// Validation m per (subject, hemisphere); needed in score mode.
  std::map<Key, double> scores;
  /// Explicit mode only.
  std::optional<double> weight;
};

struct EnsembleSpec {
  WeightMode mode = WeightMode::score;
  std::vector<Member> members;

  void validate() const;
};

/// Member paths and report paths are resolved against `base`. A member may
/// carry "scores" ({"<subject>": {"lh": m, "rh": m}}) or a "report" written
/// by evaluate on the validation split.
EnsembleSpec ensemble_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
nlohmann::json to_json(const EnsembleSpec& spec);

/// Normalizes non-negative weights so they sum to exactly 1: the largest
/// entry absorbs the rounding remainder. All-zero input gives uniform weights.
std::vector<double> normalize_weights(const std::vector<double>& raw);

/// w proportional to max(score, 0), uniform when every clipped score is 0.
std::vector<double> score_weights(const std::vector<double>& scores);

/// Sum that matches normalize_weights' construction (exactly 1 for its output).
double weight_sum(const std::vector<double>& w);

using Weights = std::map<Key, std::vector<double>>;

Weights compute_weights(const EnsembleSpec& spec, const std::vector<std::size_t>& subjects);

/// Per-element weighted sum in double. Members must agree on split, folds,
/// subjects, records and shapes. Terms are summed in sorted order, so the
/// result does not depend on member order.
PredictionSet blend(const std::vector<PredictionSet>& members, const Weights& weights);

/// Loads every member, computes weights and blends.
PredictionSet run_ensemble(const EnsembleSpec& spec);

}  // namespace brainenc::ens

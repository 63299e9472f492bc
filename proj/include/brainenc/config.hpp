#pragma once

#include <filesystem>
#include <string>

#include "brainenc/encoder.hpp"
#include "brainenc/ensemble.hpp"
#include "brainenc/trainer.hpp"
#include "json.hpp"

namespace brainenc::config {

/// One JSON document with sections data, model, train, loss and ensemble.
/// Every key is optional; unknown keys anywhere are rejected with their path.
struct RunConfig {
  /// Dataset root used when the command line does not give one.
  std::string data_root;
  /// Extractor and embedding settings. Head widths, subject count and image
  /// size are filled in from the dataset at training time.
  model::EncoderConfig model;
  train::TrainConfig train;
  /// Ensemble section, kept as given; its members are optional here.
  ens::WeightMode ensemble_mode = ens::WeightMode::score;
  nlohmann::json ensemble_members = nlohmann::json::array();
};

RunConfig run_config_from_json(const nlohmann::json& j);
/// Fully resolved document: every field present with its effective value.
nlohmann::json to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// The "model" section alone.
model::EncoderConfig model_section_from_json(const nlohmann::json& j);
nlohmann::json model_section_to_json(const model::EncoderConfig& m);

}  // namespace brainenc::config

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "brainenc/dataset.hpp"
#include "brainenc/encoder.hpp"
#include "json.hpp"

namespace brainenc::model {

/// Trained encoder plus the metadata needed to rebuild and audit it.
///
/// File layout: "NCKP", u32 version, u64 header length, UTF-8 JSON header,
/// then one NENC blob per non-empty array in header order.
struct Checkpoint {
  EncoderConfig encoder;
  std::string stage = "pretrain";
  std::size_t epoch = 0;
  double val_m = 0.0;
  /// Subjects the model serves, each with its (lh, rh) vertex count.
  std::vector<std::size_t> subjects;
  std::vector<std::pair<std::size_t, std::size_t>> vertices;
  data::RoiTable rois;
  data::FoldSpec folds;
  nlohmann::json train = nlohmann::json::object();
  std::map<std::string, nd::Tensor<float>> state;

  std::pair<std::size_t, std::size_t> vertices_of(std::size_t subject) const;
  bool covers(std::size_t subject) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Encoder with the checkpoint's architecture, ROI heads and weights.
Encoder<float> build_encoder(const Checkpoint& ckpt);

}  // namespace brainenc::model

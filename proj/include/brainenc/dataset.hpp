#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "brainenc/ndiff/tensor.hpp"
#include "json.hpp"

namespace brainenc::data {

enum class Hemisphere { lh, rh };

std::string to_string(Hemisphere h);
Hemisphere parse_hemisphere(const std::string& s);

struct Roi {
  Hemisphere hemisphere = Hemisphere::lh;
  std::vector<std::size_t> indices;  // sorted, unique
};

using RoiTable = std::map<std::string, Roi>;

struct SubjectSpec {
  std::size_t subject_index = 0;
  std::size_t lh_vertices = 0;
  std::size_t rh_vertices = 0;
  RoiTable rois;
  std::vector<float> noise_ceiling_lh;
  std::vector<float> noise_ceiling_rh;
  /// Records stored for the subject. The trailing `n_test` of them form the
  /// test split; folds cover the rest.
  std::size_t n_samples = 0;
  std::size_t n_test = 0;
  std::string dir;

  std::size_t vertices(Hemisphere h) const { return h == Hemisphere::lh ? lh_vertices : rh_vertices; }
  const std::vector<float>& noise_ceiling(Hemisphere h) const {
    return h == Hemisphere::lh ? noise_ceiling_lh : noise_ceiling_rh;
  }
  std::size_t pool_size() const { return n_samples - n_test; }
};

struct ImageDims {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t pixels() const { return channels * height * width; }
};

struct DatasetManifest {
  std::uint32_t version = 1;
  ImageDims image;
  std::vector<double> channel_mean;
  std::vector<double> channel_std;
  std::uint64_t seed = 0;
  std::vector<SubjectSpec> subjects;  // rois and noise ceilings live in per-subject files
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
/// Parses and validates shape-level invariants; no files are touched.
DatasetManifest manifest_from_json(const nlohmann::json& j);
void validate_manifest(const DatasetManifest& m);

void validate_rois(const SubjectSpec& spec);
nlohmann::json rois_to_json(const RoiTable& rois);
RoiTable rois_from_json(const nlohmann::json& j);

struct FoldAssignment {
  std::size_t n_folds = 5;
  std::vector<std::size_t> fold_of;
  std::uint64_t seed = 0;

  std::vector<std::size_t> train_indices(std::size_t fold) const;
  std::vector<std::size_t> val_indices(std::size_t fold) const;
};

/// Seeded permutation followed by round-robin assignment: fold sizes differ
/// by at most one.
FoldAssignment make_folds(std::size_t n_samples, std::size_t n_folds, std::uint64_t seed);
nlohmann::json folds_to_json(const FoldAssignment& f);
FoldAssignment folds_from_json(const nlohmann::json& j);

enum class Split { train, val, test, all };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct FoldSpec {
  std::size_t n_folds = 5;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
};

struct SubjectData {
  SubjectSpec spec;
  nd::Tensor<float> images;  // N x C x H x W, values in [0,1]
  nd::Tensor<float> lh;      // N x lh_vertices
  nd::Tensor<float> rh;      // N x rh_vertices
  std::optional<FoldAssignment> folds;

  const nd::Tensor<float>& responses(Hemisphere h) const { return h == Hemisphere::lh ? lh : rh; }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SubjectData> subjects;

  const SubjectData& subject(std::size_t index) const;
  /// Record indices of a split. Folds come from the subject's stored
  /// assignment when present, otherwise from make_folds over the pool.
  std::vector<std::size_t> split_indices(std::size_t subject, Split split, const FoldSpec& folds) const;
};

Dataset load_dataset(const std::filesystem::path& root);
void save_dataset(const Dataset& dataset, const std::filesystem::path& root);

/// Per-channel (x - mean) / std of one C x H x W image.
nd::Tensor<float> normalize_image(std::span<const float> image, const DatasetManifest& manifest);

/// Normalized images for the given records, stacked as B x C x H x W.
nd::Tensor<float> gather_images(const SubjectData& subject, std::span<const std::size_t> records,
                                const DatasetManifest& manifest);
/// Response rows for the given records, B x vertices.
nd::Tensor<float> gather_rows(const nd::Tensor<float>& matrix, std::span<const std::size_t> records);

/// Per-channel mean and std over every image of every subject.
void compute_channel_stats(Dataset& dataset);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace brainenc::data

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "brainenc/dataset.hpp"
#include "brainenc/evaluation.hpp"
#include "brainenc/prediction.hpp"
#include "json.hpp"

namespace brainenc::synth {

/// Generator settings. Vertex counts may differ per subject; an empty
/// per-subject list means every subject uses the scalar count.
struct SynthSpec {
  std::size_t n_subjects = 2;
  std::size_t samples_per_subject = 512;
  std::size_t test_samples = 128;
  data::ImageDims image{3, 16, 16};
  std::size_t lh_vertices = 200;
  std::size_t rh_vertices = 200;
  std::vector<std::size_t> lh_vertices_per_subject;
  std::vector<std::size_t> rh_vertices_per_subject;
  double shared_fraction = 0.25;
  /// Noise std relative to the unit per-vertex signal std.
  double noise_std = 1.0;
  std::size_t latent_dim = 8;
  /// Fraction of mixing-matrix variance common to all subjects.
  double subject_similarity = 0.7;
  /// Side of the coarse random grid that is upsampled into each image channel.
  std::size_t coarse_grid = 4;
  std::size_t n_rois = 3;
  double roi_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t vertices(std::size_t subject, data::Hemisphere h) const;
};

nlohmann::json to_json(const SynthSpec& s);
/// Strict parse: unknown keys are rejected with their path.
SynthSpec synth_spec_from_json(const nlohmann::json& j);

struct HemisphereTruth {
  nd::Tensor<double> weight;  // vertices x latent
  std::vector<double> bias;
  std::vector<double> signal_std;  // measured on the generated records
  std::vector<double> noise_std;
};

struct SubjectTruth {
  HemisphereTruth lh;
  HemisphereTruth rh;

  const HemisphereTruth& hemisphere(data::Hemisphere h) const { return h == data::Hemisphere::lh ? lh : rh; }
  HemisphereTruth& hemisphere(data::Hemisphere h) { return h == data::Hemisphere::lh ? lh : rh; }
};

/// Everything needed to recompute noiseless responses:
/// phi(x) = tanh((P x - mu) / sd), y = W phi(x) + b.
struct GroundTruth {
  SynthSpec spec;
  nd::Tensor<double> projection;  // latent x pixels
  std::vector<double> latent_mean;
  std::vector<double> latent_std;
  std::vector<SubjectTruth> subjects;
};

struct Synthetic {
  data::Dataset dataset;
  GroundTruth truth;
};

Synthetic generate(const SynthSpec& spec);

/// Writes the dataset layout plus ground_truth.json and ground_truth/*.nenc.
void save_synthetic(const Synthetic& synthetic, const std::filesystem::path& root);
GroundTruth load_ground_truth(const std::filesystem::path& root);

/// Latent features of raw (unnormalized) images, N x C x H x W -> N x latent.
nd::Tensor<double> latent_features(const GroundTruth& truth, const nd::Tensor<float>& images);

/// Noiseless responses W phi(x) + b for the given records.
nd::Tensor<float> noiseless_responses(const GroundTruth& truth, const data::SubjectData& subject, data::Hemisphere h,
                                      std::span<const std::size_t> records);

/// Noiseless predictions for every subject on a split.
PredictionSet oracle_predictions(const data::Dataset& dataset, const GroundTruth& truth, data::Split split,
                                 const data::FoldSpec& folds);

/// Scores the noiseless ground truth: the attainable ceiling for a model.
eval::ScoreReport oracle_score(const data::Dataset& dataset, const GroundTruth& truth, data::Split split,
                               const data::FoldSpec& folds);

/// `repeats` noisy presentations of one image (C x H x W values) to one
/// subject's hemisphere, repeats x vertices.
nd::Tensor<double> sample_repeats(const GroundTruth& truth, std::size_t subject, data::Hemisphere h,
                                  std::span<const float> image, std::size_t repeats, std::uint64_t seed);

}  // namespace brainenc::synth

#pragma once

#include <random>

#include "brainenc/dataset.hpp"

namespace testutil {

/// Small in-memory dataset with random images and responses. Subject s has
/// lh = base_lh + s and rh = base_rh vertices and one ROI per hemisphere.
inline brainenc::data::Dataset tiny_dataset(std::size_t subjects = 2, std::size_t samples = 20, std::size_t n_test = 4,
                                            std::size_t base_lh = 6, std::size_t base_rh = 5, std::uint64_t seed = 1) {
  using namespace brainenc::data;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Dataset ds;
  ds.manifest.image = ImageDims{2, 4, 4};
  ds.manifest.seed = seed;
  for (std::size_t s = 0; s < subjects; ++s) {
    SubjectData sd;
    sd.spec.subject_index = s;
    sd.spec.lh_vertices = base_lh + s;
    sd.spec.rh_vertices = base_rh;
    sd.spec.n_samples = samples;
    sd.spec.n_test = n_test;
    sd.spec.noise_ceiling_lh.assign(sd.spec.lh_vertices, 0.0f);
    sd.spec.noise_ceiling_rh.assign(sd.spec.rh_vertices, 0.0f);
    for (auto& v : sd.spec.noise_ceiling_lh) v = 0.2f + 0.8f * unit(rng);
    for (auto& v : sd.spec.noise_ceiling_rh) v = 0.2f + 0.8f * unit(rng);
    sd.spec.rois["lh_A"] = Roi{Hemisphere::lh, {0, 1, 2}};
    sd.spec.rois["rh_B"] = Roi{Hemisphere::rh, {1, 3}};
    sd.images = brainenc::nd::Tensor<float>({samples, 2, 4, 4});
    for (auto& v : sd.images.data()) v = unit(rng);
    sd.lh = brainenc::nd::Tensor<float>({samples, sd.spec.lh_vertices});
    sd.rh = brainenc::nd::Tensor<float>({samples, sd.spec.rh_vertices});
    for (auto& v : sd.lh.data()) v = normal(rng);
    for (auto& v : sd.rh.data()) v = normal(rng);
    ds.manifest.subjects.push_back(sd.spec);
    ds.subjects.push_back(std::move(sd));
  }
  compute_channel_stats(ds);
  return ds;
}

}  // namespace testutil

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "brainenc/synthgen.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace brainenc;
using namespace brainenc::synth;
using data::Hemisphere;

namespace {

SynthSpec small_spec(double noise = 1.0, std::uint64_t seed = 3) {
  SynthSpec s;
  s.samples_per_subject = 96;
  s.test_samples = 24;
  s.image = {3, 8, 8};
  s.lh_vertices = 30;
  s.rh_vertices = 20;
  s.noise_std = noise;
  s.seed = seed;
  return s;
}

const data::FoldSpec kFolds{5, 0, 0};

}  // namespace

TEST_CASE("generated dataset has the requested layout") {
  auto spec = small_spec();
  spec.lh_vertices_per_subject = {30, 34};
  const auto syn = generate(spec);
  const auto& ds = syn.dataset;
  REQUIRE(ds.subjects.size() == 2);
  CHECK(ds.subjects[1].lh.shape() == nd::Shape{120, 34});
  CHECK(ds.subjects[0].rh.shape() == nd::Shape{120, 20});
  CHECK(ds.subjects[0].images.shape() == nd::Shape{120, 3, 8, 8});
  CHECK(ds.subjects[0].spec.n_test == 24);
  CHECK(ds.subjects[0].spec.rois.size() == 6);
  CHECK_NOTHROW(data::validate_rois(ds.subjects[1].spec));
  for (float v : ds.subjects[0].images.data()) CHECK((v > 0.0f && v < 1.0f));

  // Leading shared images coincide across subjects, the rest do not.
  const std::size_t pixels = 3 * 8 * 8, shared = 24;
  const auto& a = ds.subjects[0].images.storage();
  const auto& b = ds.subjects[1].images.storage();
  CHECK(std::equal(a.begin(), a.begin() + shared * pixels, b.begin()));
  CHECK(!std::equal(a.begin() + shared * pixels, a.begin() + (shared + 1) * pixels, b.begin() + shared * pixels));
}

TEST_CASE("noiseless generation has unit ceilings and the oracle scores 1") {
  const auto syn = generate(small_spec(0.0));
  for (const auto& s : syn.dataset.subjects) {
    for (float nc : s.spec.noise_ceiling_lh) CHECK(nc == 1.0f);
    for (float nc : s.spec.noise_ceiling_rh) CHECK(nc == 1.0f);
  }
  for (auto split : {data::Split::val, data::Split::test}) {
    const auto report = oracle_score(syn.dataset, syn.truth, split, kFolds);
    CHECK(std::abs(report.overall_m - 1.0) < 1e-6);
  }
}

TEST_CASE("equal signal and noise std gives ceilings near one half") {
  const auto syn = generate(small_spec(1.0));
  const auto& truth = syn.truth;
  double stored = 0.0, estimated = 0.0;
  std::size_t count = 0;
  const std::size_t pixels = syn.dataset.manifest.image.pixels();
  for (std::size_t s = 0; s < 2; ++s) {
    const auto& sd = syn.dataset.subjects[s];
    for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
      const auto& ht = truth.subjects[s].hemisphere(h);
      // Signal variance from noiseless responses, noise variance from repeats.
      std::vector<std::size_t> all(sd.spec.n_samples);
      std::iota(all.begin(), all.end(), std::size_t{0});
      const auto clean = noiseless_responses(truth, sd, h, all);
      const auto reps = sample_repeats(truth, s, h, sd.images.data().subspan(0, pixels), 400, 11 + s);
      const std::size_t v = ht.bias.size();
      for (std::size_t i = 0; i < v; ++i) {
        double m = 0, ss = 0, rm = 0, rs = 0;
        for (std::size_t r = 0; r < all.size(); ++r) m += clean.at(r, i);
        m /= static_cast<double>(all.size());
        for (std::size_t r = 0; r < all.size(); ++r) ss += (clean.at(r, i) - m) * (clean.at(r, i) - m);
        ss /= static_cast<double>(all.size());
        for (std::size_t r = 0; r < 400; ++r) rm += reps.at(r, i);
        rm /= 400.0;
        for (std::size_t r = 0; r < 400; ++r) rs += (reps.at(r, i) - rm) * (reps.at(r, i) - rm);
        rs /= 399.0;
        estimated += ss / (ss + rs);
        stored += sd.spec.noise_ceiling(h)[i];
        ++count;
      }
    }
  }
  CHECK(std::abs(stored / static_cast<double>(count) - 0.5) < 0.02);
  CHECK(std::abs(estimated / static_cast<double>(count) - 0.5) < 0.02);
}

TEST_CASE("repeat noise variance matches the configured noise") {
  for (double noise : {0.5, 1.0, 2.0}) {
    const auto syn = generate(small_spec(noise));
    const auto& sd = syn.dataset.subjects[0];
    const auto reps =
        sample_repeats(syn.truth, 0, Hemisphere::lh, sd.images.data().subspan(0, sd.images.size() / sd.images.dim(0)), 5000, 5);
    for (std::size_t i = 0; i < reps.dim(1); ++i) {
      double m = 0, ss = 0;
      for (std::size_t r = 0; r < reps.dim(0); ++r) m += reps.at(r, i);
      m /= static_cast<double>(reps.dim(0));
      for (std::size_t r = 0; r < reps.dim(0); ++r) ss += (reps.at(r, i) - m) * (reps.at(r, i) - m);
      ss /= static_cast<double>(reps.dim(0) - 1);
      CHECK(std::abs(ss / (noise * noise) - 1.0) < 0.10);
    }
  }
}

TEST_CASE("regeneration is bitwise identical and seeds matter") {
  const auto a = generate(small_spec(1.0, 9));
  const auto b = generate(small_spec(1.0, 9));
  const auto c = generate(small_spec(1.0, 10));
  for (std::size_t s = 0; s < 2; ++s) {
    CHECK(a.dataset.subjects[s].images.storage() == b.dataset.subjects[s].images.storage());
    CHECK(a.dataset.subjects[s].lh.storage() == b.dataset.subjects[s].lh.storage());
    CHECK(a.dataset.subjects[s].rh.storage() == b.dataset.subjects[s].rh.storage());
    CHECK(a.dataset.subjects[s].spec.noise_ceiling_lh == b.dataset.subjects[s].spec.noise_ceiling_lh);
    CHECK(a.dataset.subjects[s].lh.storage() != c.dataset.subjects[s].lh.storage());
  }
}

TEST_CASE("shuffling vertex weights destroys the oracle score") {
  const auto syn = generate(small_spec(0.5));
  const double good = oracle_score(syn.dataset, syn.truth, data::Split::test, kFolds).overall_m;
  CHECK(good > 0.5);
  auto bad = syn.truth;
  std::mt19937_64 rng(4);
  for (auto& st : bad.subjects)
    for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
      auto& ht = st.hemisphere(h);
      const std::size_t v = ht.bias.size(), k = ht.weight.dim(1);
      std::vector<std::size_t> perm(v);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      auto w = ht.weight;
      for (std::size_t i = 0; i < v; ++i)
        for (std::size_t j = 0; j < k; ++j) ht.weight[i * k + j] = w[perm[i] * k + j];
    }
  CHECK(oracle_score(syn.dataset, bad, data::Split::test, kFolds).overall_m < 0.3 * good);
}

TEST_CASE("subject similarity controls shared structure") {
  auto corr = [](double sim) {
    auto spec = small_spec();
    spec.subject_similarity = sim;
    const auto syn = generate(spec);
    const auto& w0 = syn.truth.subjects[0].lh.weight.storage();
    const auto& w1 = syn.truth.subjects[1].lh.weight.storage();
    return oracle::pearson(w0, w1);
  };
  CHECK(std::abs(corr(0.0)) < 0.2);
  CHECK(corr(0.9) > 0.7);
}

TEST_CASE("save and reload reproduces the oracle") {
  testutil::TempDir dir("synth");
  const auto syn = generate(small_spec());
  save_synthetic(syn, dir.path());
  CHECK(std::filesystem::exists(dir.path() / "ground_truth.json"));
  CHECK(std::filesystem::exists(dir.path() / "ground_truth" / "projection.nenc"));
  const auto ds = data::load_dataset(dir.path());
  const auto truth = load_ground_truth(dir.path());
  const auto a = oracle_score(syn.dataset, syn.truth, data::Split::val, kFolds).overall_m;
  const auto b = oracle_score(ds, truth, data::Split::val, kFolds).overall_m;
  CHECK(a == b);

  const auto lat = latent_features(truth, ds.subjects[0].images);
  CHECK(lat.shape() == nd::Shape{120, 8});
  for (double v : lat.data()) CHECK(std::abs(v) < 1.0);

  auto wrong = truth;
  wrong.subjects[0].lh.bias.pop_back();
  CHECK_THROWS_AS(oracle_score(ds, wrong, data::Split::val, kFolds), ValidationError);
  CHECK_THROWS_AS(load_ground_truth(dir.path() / "missing"), MissingFileError);
}

TEST_CASE("spec JSON is strict") {
  const auto spec = small_spec();
  const auto back = synth_spec_from_json(to_json(spec));
  CHECK(to_json(back) == to_json(spec));
  auto j = to_json(spec);
  j["noise_sd"] = 1.0;
  CHECK_THROWS_WITH_AS(synth_spec_from_json(j), doctest::Contains("noise_sd"), ConfigError);
  j = to_json(spec);
  j["image"]["depth"] = 2;
  CHECK_THROWS_WITH_AS(synth_spec_from_json(j), doctest::Contains("image.depth"), ConfigError);
  j = to_json(spec);
  j["latent_dim"] = "eight";
  CHECK_THROWS_AS(synth_spec_from_json(j), ConfigError);
  j = to_json(spec);
  j["lh_vertices"] = {10};
  CHECK_THROWS_AS(synth_spec_from_json(j), ConfigError);
  j = to_json(spec);
  j["subject_similarity"] = 1.5;
  CHECK_THROWS_AS(synth_spec_from_json(j), ConfigError);
}

#include <cmath>
#include <random>

#include "brainenc/encoder.hpp"
#include "brainenc/ndiff/grad_check.hpp"
#include "brainenc/objectives.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace brainenc;
using namespace brainenc::model;
using nd::Mode;
using nd::Tape;
using nd::Tensor;
using data::Hemisphere;

namespace {

EncoderConfig tiny_config(ExtractorKind kind, std::size_t subjects = 3) {
  EncoderConfig c;
  c.extractor.kind = kind;
  c.extractor.widths = kind == ExtractorKind::mlp ? std::vector<std::size_t>{6} : std::vector<std::size_t>{3, 4};
  c.extractor.feature_dim = 5;
  c.image = data::ImageDims{2, 8, 8};
  c.n_subjects = subjects;
  c.embedding_dim = 4;
  c.lh_outputs = 7;
  c.rh_outputs = 5;
  return c;
}

template <typename T>
Tensor<T> images(std::size_t batch, const data::ImageDims& d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return testutil::random_tensor<T>({batch, d.channels, d.height, d.width}, rng);
}

// Infer-mode statistics that are not the identity, so batch-size checks mean something.
template <typename T>
void perturb_running_stats(Encoder<T>& enc) {
  for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
    auto& bn = enc.head(h).bn;
    for (std::size_t i = 0; i < bn.features(); ++i) {
      bn.running_mean[i] = static_cast<T>(0.1 * static_cast<double>(i % 3));
      bn.running_var[i] = static_cast<T>(0.5 + 0.25 * static_cast<double>(i % 4));
    }
  }
}

}  // namespace

TEST_CASE("output shapes for both extractor kinds") {
  for (auto kind : {ExtractorKind::mlp, ExtractorKind::conv}) {
    CAPTURE(to_string(kind));
    Encoder<float> enc(tiny_config(kind), 1);
    Tape<float> tape;
    const std::vector<std::size_t> subj{0, 2, 1, 1};
    auto feats = enc.extract_features(tape, images<float>(4, enc.config().image, 2), Mode::train);
    CHECK(feats.shape() == nd::Shape{4, 5});
    auto out = enc.forward(tape, images<float>(4, enc.config().image, 2), subj, Mode::train);
    CHECK(out.lh.shape() == nd::Shape{4, 7});
    CHECK(out.rh.shape() == nd::Shape{4, 5});
    CHECK(out.rois.empty());
  }
}

TEST_CASE("NSD-shaped heads") {
  EncoderConfig c = tiny_config(ExtractorKind::mlp);
  c.lh_outputs = 19004;
  c.rh_outputs = 20544;
  Encoder<float> enc(c, 1);
  Tape<float> tape;
  const std::vector<std::size_t> subj{0, 1};
  auto out = enc.forward(tape, images<float>(2, c.image, 3), subj, Mode::train);
  CHECK(out.lh.shape() == nd::Shape{2, 19004});
  CHECK(out.rh.shape() == nd::Shape{2, 20544});
}

TEST_CASE("embedding defaults and lookup") {
  CHECK(EncoderConfig{}.embedding_dim == 512);
  CHECK(ExtractorConfig{}.feature_dim == 256);
  Encoder<double> enc(tiny_config(ExtractorKind::mlp), 4);
  Tape<double> tape;
  const std::vector<std::size_t> subj{2, 0};
  auto e = enc.embed_subjects(tape, subj);
  const auto& table = enc.embedding().value;
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(e.value().at(0, j) == table.at(2, j));
    CHECK(e.value().at(1, j) == table.at(0, j));
  }
  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(enc.embed_subjects(tape, bad), ArgumentError);
}

TEST_CASE("identical images give identical features in infer mode") {
  for (auto kind : {ExtractorKind::mlp, ExtractorKind::conv}) {
    Encoder<float> enc(tiny_config(kind), 5);
    auto one = images<float>(1, enc.config().image, 6);
    Tensor<float> two({2, 2, 8, 8});
    for (std::size_t i = 0; i < one.size(); ++i) two[i] = two[one.size() + i] = one[i];
    Tape<float> tape;
    auto f = enc.extract_features(tape, two, Mode::infer);
    for (std::size_t j = 0; j < 5; ++j) CHECK(f.value().at(0, j) == f.value().at(1, j));
  }
}

TEST_CASE("subject conditioning") {
  Encoder<double> enc(tiny_config(ExtractorKind::mlp), 7);
  perturb_running_stats(enc);
  auto img = images<double>(1, enc.config().image, 8);
  auto predict = [&](std::size_t s) {
    Tape<double> tape;
    const std::vector<std::size_t> subj{s};
    return enc.forward(tape, img, subj, Mode::infer).lh.value();
  };
  CHECK(predict(0) != predict(1));

  SUBCASE("swapping table rows swaps outputs") {
    const auto before0 = predict(0), before1 = predict(1);
    auto& table = enc.embedding().value;
    for (std::size_t j = 0; j < 4; ++j) std::swap(table.at(0, j), table.at(1, j));
    CHECK(predict(0) == before1);
    CHECK(predict(1) == before0);
  }
}

TEST_CASE("zero head weights emit the bias") {
  Encoder<double> enc(tiny_config(ExtractorKind::conv), 9);
  auto& lin = enc.head(Hemisphere::lh).linear;
  lin.weight.value.fill(0.0);
  for (std::size_t i = 0; i < 7; ++i) lin.bias.value[i] = 0.5 * static_cast<double>(i);
  Tape<double> tape;
  const std::vector<std::size_t> subj{0, 1, 2};
  auto out = enc.forward(tape, images<double>(3, enc.config().image, 10), subj, Mode::train);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t i = 0; i < 7; ++i) CHECK(out.lh.value().at(r, i) == 0.5 * static_cast<double>(i));
}

TEST_CASE("aggregate_prediction examples") {
  Tape<double> tape;
  auto full = tape.constant(Tensor<double>({1, 3}, {0.0, 0.0, 4.0}));
  const std::vector<std::size_t> a{0, 1}, b{1};
  auto ra = tape.constant(Tensor<double>({1, 2}, {1.0, 1.0}));
  auto rb = tape.constant(Tensor<double>({1, 1}, {2.0}));
  auto y = aggregate_prediction<double>(full, {{ra, a}, {rb, b}});
  CHECK(y.value()[0] == 0.5);   // one ROI
  CHECK(y.value()[1] == 1.0);   // two ROIs: mean of 0, 1, 2
  CHECK(y.value()[2] == 4.0);   // untouched
  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(aggregate_prediction<double>(full, {{rb, bad}}), ValidationError);
  CHECK(aggregate_prediction<double>(full, {}).value() == full.value());
}

TEST_CASE("aggregation is linear in head outputs (property)") {
  std::mt19937_64 rng(11);
  const std::vector<std::size_t> a{0, 2, 3}, b{2, 4};
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> tape;
    auto f1 = testutil::random_tensor({2, 5}, rng), f2 = testutil::random_tensor({2, 5}, rng);
    auto a1 = testutil::random_tensor({2, 3}, rng), a2 = testutil::random_tensor({2, 3}, rng);
    auto b1 = testutil::random_tensor({2, 2}, rng), b2 = testutil::random_tensor({2, 2}, rng);
    auto c = [&](const Tensor<double>& t) { return tape.constant(t); };
    auto sum = [](Tensor<double> x, const Tensor<double>& y) {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
      return x;
    };
    const auto y1 = aggregate_prediction<double>(c(f1), {{c(a1), a}, {c(b1), b}}).value();
    const auto y2 = aggregate_prediction<double>(c(f2), {{c(a2), a}, {c(b2), b}}).value();
    const auto y12 = aggregate_prediction<double>(c(sum(f1, f2)), {{c(sum(a1, a2)), a}, {c(sum(b1, b2)), b}}).value();
    for (std::size_t i = 0; i < y12.size(); ++i) CHECK(std::abs(y12[i] - (y1[i] + y2[i])) < 1e-12);
  }
}

TEST_CASE("ROI heads start as copies so aggregation is the identity") {
  Encoder<double> enc(tiny_config(ExtractorKind::mlp), 12);
  perturb_running_stats(enc);
  data::RoiTable rois;
  rois["lh_V1v"] = data::Roi{Hemisphere::lh, {0, 3, 6}};
  rois["lh_FFA"] = data::Roi{Hemisphere::lh, {3, 4}};
  rois["rh_V1v"] = data::Roi{Hemisphere::rh, {1}};
  enc.add_roi_heads(rois);
  CHECK(enc.roi_heads().size() == 3);
  Tape<double> tape;
  const std::vector<std::size_t> subj{0, 1};
  auto out = enc.forward(tape, images<double>(2, enc.config().image, 13), subj, Mode::infer);
  CHECK(out.rois.at("lh_FFA").shape() == nd::Shape{2, 2});
  for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
    const auto agg = enc.aggregate(out, h).value();
    const auto& full = (h == Hemisphere::lh ? out.lh : out.rh).value();
    for (std::size_t i = 0; i < agg.size(); ++i) CHECK(std::abs(agg[i] - full[i]) < 1e-12);
  }
  data::RoiTable bad;
  bad["rh_X"] = data::Roi{Hemisphere::rh, {5}};
  CHECK_THROWS_AS(enc.add_roi_heads(bad), ValidationError);
  CHECK_THROWS_AS(enc.slice_heads(3, 3), ArgumentError);
}

TEST_CASE("slice_heads keeps leading columns") {
  Encoder<double> enc(tiny_config(ExtractorKind::mlp), 14);
  auto img = images<double>(3, enc.config().image, 15);
  const std::vector<std::size_t> subj{0, 1, 2};
  Tensor<double> before;
  {
    Tape<double> tape;
    before = enc.forward(tape, img, subj, Mode::infer).lh.value();
  }
  enc.slice_heads(4, 2);
  Tape<double> tape;
  auto out = enc.forward(tape, img, subj, Mode::infer);
  CHECK(out.lh.shape() == nd::Shape{3, 4});
  CHECK(out.rh.shape() == nd::Shape{3, 2});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(out.lh.value().at(r, c) == before.at(r, c));
}

TEST_CASE("infer mode is batch-size independent") {
  for (auto kind : {ExtractorKind::mlp, ExtractorKind::conv}) {
    Encoder<float> enc(tiny_config(kind), 16);
    perturb_running_stats(enc);
    const auto batch = images<float>(3, enc.config().image, 17);
    const std::vector<std::size_t> subj{2, 0, 1};
    Tape<float> tape;
    const auto all = enc.forward(tape, batch, subj, Mode::infer).rh.value();
    const std::size_t px = enc.config().image.pixels();
    for (std::size_t i = 0; i < 3; ++i) {
      Tensor<float> one({1, 2, 8, 8});
      for (std::size_t k = 0; k < px; ++k) one[k] = batch[i * px + k];
      Tape<float> t1;
      const std::vector<std::size_t> s{subj[i]};
      const auto single = enc.forward(t1, one, s, Mode::infer).rh.value();
      for (std::size_t c = 0; c < 5; ++c) CHECK(single[c] == all.at(i, c));
    }
  }
}

TEST_CASE("construction and forward are deterministic") {
  Encoder<float> a(tiny_config(ExtractorKind::conv), 18), b(tiny_config(ExtractorKind::conv), 18);
  CHECK(a.state() == b.state());
  Encoder<float> c(tiny_config(ExtractorKind::conv), 19);
  CHECK(a.state() != c.state());
  const auto img = images<float>(4, a.config().image, 20);
  const std::vector<std::size_t> subj{0, 1, 2, 0};
  Tape<float> ta, tb;
  CHECK(a.forward(ta, img, subj, Mode::train).lh.value() == b.forward(tb, img, subj, Mode::train).lh.value());
}

TEST_CASE("state round trip covers parameters and running statistics") {
  Encoder<float> a(tiny_config(ExtractorKind::conv), 21);
  data::RoiTable rois;
  rois["lh_A"] = data::Roi{Hemisphere::lh, {1, 2}};
  a.add_roi_heads(rois);
  Tape<float> tape;
  const std::vector<std::size_t> subj{0, 1};
  a.forward(tape, images<float>(2, a.config().image, 22), subj, Mode::train);  // moves running stats
  const auto state = a.state();
  CHECK(state.count("head_lh.bn.running_var") == 1);
  CHECK(state.count("extractor.bn0.running_mean") == 1);
  CHECK(state.count("roi.lh_A.weight") == 1);
  CHECK(state.count("embedding.weight") == 1);

  Encoder<float> b(tiny_config(ExtractorKind::conv), 23);
  b.add_roi_heads(rois);
  b.load_state(state);
  CHECK(b.state() == state);
  auto missing = state;
  missing.erase("head_rh.linear.bias");
  CHECK_THROWS_AS(b.load_state(missing), ValidationError);
}

TEST_CASE("configuration validation and json") {
  auto c = tiny_config(ExtractorKind::conv);
  const auto back = encoder_config_from_json(to_json(c));
  CHECK(back.extractor.widths == c.extractor.widths);
  CHECK(back.lh_outputs == 7);
  CHECK(back.extractor.kind == ExtractorKind::conv);
  c.extractor.feature_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(Encoder<float>(c, 1), ConfigError);
  Encoder<float> enc(tiny_config(ExtractorKind::mlp), 1);
  Tape<float> tape;
  CHECK_THROWS_AS(enc.extract_features(tape, Tensor<float>({1, 3, 8, 8}), Mode::infer), ShapeError);
}

TEST_CASE("extractor gradient with respect to pixels") {
  for (auto kind : {ExtractorKind::mlp, ExtractorKind::conv}) {
    CAPTURE(to_string(kind));
    auto cfg = tiny_config(kind);
    cfg.extractor.activation = Activation::tanh;
    Encoder<double> enc(cfg, 24);
    const auto img = images<double>(3, cfg.image, 25);
    CHECK(nd::grad_check([&](Tape<double>&, nd::Var<double> x) {
            return nd::mean_all(enc.extract_features(*x.tape, x, Mode::train));
          }, img) < 1e-4);
  }
}

TEST_CASE("full forward plus composite loss passes grad_check for every parameter") {
  for (auto kind : {ExtractorKind::mlp, ExtractorKind::conv}) {
    CAPTURE(to_string(kind));
    auto cfg = tiny_config(kind);
    cfg.extractor.activation = Activation::tanh;
    Encoder<double> enc(cfg, 26);
    data::RoiTable rois;
    rois["lh_A"] = data::Roi{Hemisphere::lh, {0, 2, 5}};
    rois["rh_B"] = data::Roi{Hemisphere::rh, {1, 2}};
    enc.add_roi_heads(rois);
    std::mt19937_64 rng(27);
    for (auto* p : enc.parameters())
      for (auto& v : p->value.data()) v += std::normal_distribution<double>(0.0, 0.1)(rng);
    const auto img = images<double>(4, cfg.image, 28);
    const auto gt_l = testutil::random_tensor({4, 7}, rng), gt_r = testutil::random_tensor({4, 5}, rng);
    const std::vector<double> nc_l{0.5, 0.7, 0.0, 1.0, 0.2, 0.9, 0.4}, nc_r{0.3, 0.8, 0.6, 1.0, 0.5};
    const std::vector<std::uint8_t> mask_l{1, 1, 1, 1, 1, 1, 0};
    const std::vector<std::size_t> subj{0, 1, 2, 1};
    auto loss = [&](Tape<double>& tape) {
      auto out = enc.forward(tape, img, subj, Mode::train);
      return obj::composite_loss(enc.aggregate(out, Hemisphere::lh), enc.aggregate(out, Hemisphere::rh),
                                 tape.constant(gt_l), tape.constant(gt_r), obj::LossSpec{},
                                 std::span<const double>(nc_l), std::span<const double>(nc_r),
                                 std::span<const std::uint8_t>(mask_l));
    };
    double worst = 0.0;
    for (auto* p : enc.parameters()) {
      CAPTURE(p->name);
      if ((p->name.starts_with("extractor.conv") && p->name.ends_with(".bias")) || p->name == "extractor.out.bias") {
        // Batch norm removes any per-column shift, so the exact gradient is zero.
        p->zero_grad();
        Tape<double> tape;
        tape.backward(loss(tape));
        for (double g : p->grad.data()) CHECK(std::abs(g) < 1e-10);
        continue;
      }
      const double err = nd::grad_check_parameter(loss, *p);
      CHECK(err < 1e-4);
      worst = std::max(worst, err);
    }
    MESSAGE("worst relative error " << worst);
  }
}

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "brainenc/dataset.hpp"
#include "brainenc/ndiff/ops.hpp"
#include "json.hpp"

namespace brainenc::model {

enum class ExtractorKind { conv, mlp };
enum class Activation { relu, tanh };

struct ExtractorConfig {
  ExtractorKind kind = ExtractorKind::mlp;
  /// Hidden widths (mlp) or per-stage channel counts (conv; the last entry
  /// repeats when the stack is deeper than the list).
  std::vector<std::size_t> widths{128};
  Activation activation = Activation::relu;
  std::size_t feature_dim = 256;
};

struct EncoderConfig {
  ExtractorConfig extractor;
  data::ImageDims image;
  std::size_t n_subjects = 1;
  std::size_t embedding_dim = 512;
  std::size_t lh_outputs = 1;
  std::size_t rh_outputs = 1;

  void validate() const;
  std::size_t outputs(data::Hemisphere h) const { return h == data::Hemisphere::lh ? lh_outputs : rh_outputs; }
};

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
std::string to_string(ExtractorKind k);
std::string to_string(Activation a);

/// y = x W + b with W stored in x out.
template <typename T>
struct Linear {
  nd::Parameter<T> weight;
  nd::Parameter<T> bias;

  Linear() = default;
  Linear(const std::string& prefix, std::size_t in, std::size_t out);
  nd::Var<T> operator()(nd::Tape<T>& tape, nd::Var<T> x);
  std::size_t in_features() const { return weight.value.dim(0); }
  std::size_t out_features() const { return weight.value.dim(1); }
};

template <typename T>
struct HemisphereHead {
  nd::BatchNorm<T> bn;
  Linear<T> linear;
};

/// Fine-tuning head for one ROI; reads the normalized features of its
/// hemisphere's head.
template <typename T>
struct RoiHead {
  std::string name;
  data::Hemisphere hemisphere = data::Hemisphere::lh;
  std::vector<std::size_t> indices;
  Linear<T> linear;
};

/// Averages the full-head prediction with every ROI head covering a vertex.
/// Each ROI entry is (output B x |roi|, vertex indices). Vertices outside all
/// ROIs pass through unchanged.
template <typename T>
nd::Var<T> aggregate_prediction(nd::Var<T> full,
                                const std::vector<std::pair<nd::Var<T>, std::span<const std::size_t>>>& rois);

/// Subject-conditioned encoder: features f = [extractor(image), embedding(subject)],
/// each hemisphere head applies batch_norm then linear to f.
template <typename T>
class Encoder {
 public:
  struct Output {
    nd::Var<T> lh;
    nd::Var<T> rh;
    /// Raw ROI head outputs keyed by ROI name.
    std::map<std::string, nd::Var<T>> rois;
  };

  Encoder(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }

  nd::Var<T> extract_features(nd::Tape<T>& tape, const nd::Tensor<T>& images, nd::Mode mode);
  /// Same, with the images already on the tape (lets gradients reach pixels).
  nd::Var<T> extract_features(nd::Tape<T>& tape, nd::Var<T> images, nd::Mode mode);
  nd::Var<T> embed_subjects(nd::Tape<T>& tape, std::span<const std::size_t> subjects);
  Output forward(nd::Tape<T>& tape, const nd::Tensor<T>& images, std::span<const std::size_t> subjects, nd::Mode mode);

  /// Full-head output of hemisphere `h` combined with its ROI heads.
  nd::Var<T> aggregate(const Output& out, data::Hemisphere h) const;

  /// Adds one linear head per ROI. Each starts as a copy of the full head's
  /// columns at the ROI's vertices, so aggregation is initially the identity.
  void add_roi_heads(const data::RoiTable& rois);
  const std::vector<RoiHead<T>>& roi_heads() const { return roi_heads_; }
  data::RoiTable roi_table() const;

  /// Keeps the first `lh` / `rh` output columns of each hemisphere head.
  void slice_heads(std::size_t lh, std::size_t rh);
  void reinit_heads(std::uint64_t seed);
  void reinit_embedding(std::uint64_t seed);
  void set_extractor_trainable(bool trainable);

  std::vector<nd::Parameter<T>*> parameters();
  std::vector<nd::Parameter<T>*> extractor_parameters();
  HemisphereHead<T>& head(data::Hemisphere h) { return h == data::Hemisphere::lh ? head_lh_ : head_rh_; }
  nd::Parameter<T>& embedding() { return embedding_; }

  /// Every parameter and running statistic by name.
  std::map<std::string, nd::Tensor<T>> state() const;
  /// Loads tensors by name; every entry of state() must be present.
  void load_state(const std::map<std::string, nd::Tensor<T>>& state);

 private:
  template <typename Fn>
  void for_each_tensor(Fn&& fn);
  void init_linear(Linear<T>& layer, std::mt19937_64& rng);

  EncoderConfig config_;
  std::vector<Linear<T>> mlp_layers_;
  std::vector<nd::Parameter<T>> conv_weights_;
  std::vector<nd::Parameter<T>> conv_biases_;
  std::vector<nd::BatchNorm<T>> conv_norms_;
  Linear<T> feature_out_;
  nd::Parameter<T> embedding_;
  HemisphereHead<T> head_lh_;
  HemisphereHead<T> head_rh_;
  std::vector<RoiHead<T>> roi_heads_;
};

}  // namespace brainenc::model

#include "brainenc/encoder.hpp"

#include <cmath>

namespace brainenc::model {

using nd::Mode;
using nd::Parameter;
using nd::Tape;
using nd::Tensor;
using nd::Var;
using nlohmann::json;

std::string to_string(ExtractorKind k) { return k == ExtractorKind::conv ? "conv" : "mlp"; }
std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

void EncoderConfig::validate() const {
  if (extractor.feature_dim == 0) throw ConfigError("model.extractor.feature_dim must be at least 1");
  if (extractor.kind == ExtractorKind::conv && extractor.widths.empty())
    throw ConfigError("model.extractor.widths must list at least one channel count for the conv extractor");
  for (auto w : extractor.widths)
    if (w == 0) throw ConfigError("model.extractor.widths entries must be positive");
  if (image.pixels() == 0) throw ConfigError("image dimensions must be positive");
  if (n_subjects == 0) throw ConfigError("encoder needs at least one subject");
  if (lh_outputs == 0 || rh_outputs == 0) throw ConfigError("hemisphere heads need at least one output");
}

json to_json(const EncoderConfig& c) {
  return {{"extractor",
           {{"kind", to_string(c.extractor.kind)},
            {"widths", c.extractor.widths},
            {"activation", to_string(c.extractor.activation)},
            {"feature_dim", c.extractor.feature_dim}}},
          {"image", {{"channels", c.image.channels}, {"height", c.image.height}, {"width", c.image.width}}},
          {"n_subjects", c.n_subjects},
          {"embedding_dim", c.embedding_dim},
          {"lh_outputs", c.lh_outputs},
          {"rh_outputs", c.rh_outputs}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  try {
    const auto& e = j.at("extractor");
    const auto kind = e.at("kind").get<std::string>();
    if (kind != "conv" && kind != "mlp") throw ConfigError("unknown extractor kind '" + kind + "'");
    c.extractor.kind = kind == "conv" ? ExtractorKind::conv : ExtractorKind::mlp;
    c.extractor.widths = e.at("widths").get<std::vector<std::size_t>>();
    const auto act = e.at("activation").get<std::string>();
    if (act != "relu" && act != "tanh") throw ConfigError("unknown activation '" + act + "'");
    c.extractor.activation = act == "relu" ? Activation::relu : Activation::tanh;
    c.extractor.feature_dim = e.at("feature_dim").get<std::size_t>();
    const auto& img = j.at("image");
    c.image = {img.at("channels").get<std::size_t>(), img.at("height").get<std::size_t>(), img.at("width").get<std::size_t>()};
    c.n_subjects = j.at("n_subjects").get<std::size_t>();
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.lh_outputs = j.at("lh_outputs").get<std::size_t>();
    c.rh_outputs = j.at("rh_outputs").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("encoder config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
Linear<T>::Linear(const std::string& prefix, std::size_t in, std::size_t out)
    : weight(prefix + ".weight", Tensor<T>({in, out})), bias(prefix + ".bias", Tensor<T>({out})) {}

template <typename T>
Var<T> Linear<T>::operator()(Tape<T>& tape, Var<T> x) {
  return nd::add_bias(nd::matmul(x, tape.param(weight)), tape.param(bias));
}

template <typename T>
Var<T> aggregate_prediction(Var<T> full, const std::vector<std::pair<Var<T>, std::span<const std::size_t>>>& rois) {
  if (full.shape().size() != 2) throw ShapeError("aggregate_prediction: full prediction must be rank 2");
  const std::size_t width = full.dim(1);
  std::vector<T> count(width, T{1});
  Var<T> sum = full;
  for (const auto& [out, indices] : rois) {
    if (out.shape().size() != 2 || out.dim(1) != indices.size() || out.dim(0) != full.dim(0))
      throw ShapeError("aggregate_prediction: ROI output " + nd::shape_str(out.shape()) + " does not match its " +
                       std::to_string(indices.size()) + " vertices");
    for (auto v : indices) {
      if (v >= width)
        throw ValidationError("aggregate_prediction: ROI vertex " + std::to_string(v) + " outside " + std::to_string(width) +
                              " outputs");
      count[v] += T{1};
    }
    sum = nd::scatter_add_cols(sum, out, indices);
  }
  if (rois.empty()) return full;
  for (auto& c : count) c = T{1} / c;
  return nd::scale_cols(sum, std::span<const T>(count));
}

namespace {

std::size_t conv_stages(const data::ImageDims& d) {
  std::size_t h = d.height, w = d.width, stages = 0;
  while (std::max(h, w) > 4) {
    h = (h + 2 - 3) / 2 + 1;
    w = (w + 2 - 3) / 2 + 1;
    ++stages;
  }
  return stages;
}

template <typename T>
void fill_uniform(Tensor<T>& t, T bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
Var<T> activate(Var<T> x, Activation a) {
  return a == Activation::relu ? nd::relu(x) : nd::tanh(x);
}

}  // namespace

template <typename T>
void Encoder<T>::init_linear(Linear<T>& layer, std::mt19937_64& rng) {
  const T bound = T{1} / std::sqrt(static_cast<T>(std::max<std::size_t>(layer.in_features(), 1)));
  fill_uniform(layer.weight.value, bound, rng);
  layer.bias.value.fill(T{0});
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto& ex = config_.extractor;
  std::size_t feature_in = 0;
  if (ex.kind == ExtractorKind::mlp) {
    std::size_t in = config_.image.pixels();
    for (std::size_t i = 0; i < ex.widths.size(); ++i) {
      mlp_layers_.emplace_back("extractor.fc" + std::to_string(i), in, ex.widths[i]);
      init_linear(mlp_layers_.back(), rng);
      in = ex.widths[i];
    }
    feature_in = in;
  } else {
    std::size_t in = config_.image.channels;
    const std::size_t stages = conv_stages(config_.image);
    for (std::size_t i = 0; i < stages; ++i) {
      const std::size_t out = ex.widths[std::min(i, ex.widths.size() - 1)];
      const std::string prefix = "extractor.conv" + std::to_string(i);
      conv_weights_.emplace_back(prefix + ".weight", Tensor<T>({out, in, 3, 3}));
      conv_biases_.emplace_back(prefix + ".bias", Tensor<T>({out}));
      fill_uniform(conv_weights_.back().value, T{1} / std::sqrt(static_cast<T>(in * 9)), rng);
      conv_norms_.emplace_back("extractor.bn" + std::to_string(i), out);
      in = out;
    }
    feature_in = in;
  }
  feature_out_ = Linear<T>("extractor.out", feature_in, ex.feature_dim);
  init_linear(feature_out_, rng);

  embedding_ = Parameter<T>("embedding.weight", Tensor<T>({config_.n_subjects, config_.embedding_dim}));
  reinit_embedding(rng());
  reinit_heads(rng());
}

template <typename T>
void Encoder<T>::reinit_embedding(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  for (auto& v : embedding_.value.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void Encoder<T>::reinit_heads(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t f = config_.extractor.feature_dim + config_.embedding_dim;
  for (auto h : {data::Hemisphere::lh, data::Hemisphere::rh}) {
    const std::string prefix = "head_" + data::to_string(h);
    auto& head = this->head(h);
    head.bn = nd::BatchNorm<T>(prefix + ".bn", f);
    head.linear = Linear<T>(prefix + ".linear", f, config_.outputs(h));
    init_linear(head.linear, rng);
  }
  roi_heads_.clear();
}

template <typename T>
void Encoder<T>::slice_heads(std::size_t lh, std::size_t rh) {
  if (!roi_heads_.empty()) throw ArgumentError("slice_heads: slice before adding ROI heads");
  for (auto h : {data::Hemisphere::lh, data::Hemisphere::rh}) {
    const std::size_t keep = h == data::Hemisphere::lh ? lh : rh;
    auto& lin = head(h).linear;
    const std::size_t in = lin.in_features(), out = lin.out_features();
    if (keep == 0 || keep > out)
      throw ArgumentError("slice_heads: cannot keep " + std::to_string(keep) + " of " + std::to_string(out) + " outputs");
    Tensor<T> w({in, keep}), b({keep});
    for (std::size_t r = 0; r < in; ++r)
      for (std::size_t c = 0; c < keep; ++c) w[r * keep + c] = lin.weight.value[r * out + c];
    for (std::size_t c = 0; c < keep; ++c) b[c] = lin.bias.value[c];
    lin.weight.value = std::move(w);
    lin.bias.value = std::move(b);
    lin.weight.grad = {};
    lin.bias.grad = {};
  }
  config_.lh_outputs = lh;
  config_.rh_outputs = rh;
}

template <typename T>
void Encoder<T>::add_roi_heads(const data::RoiTable& rois) {
  for (const auto& [name, roi] : rois) {
    auto& full = head(roi.hemisphere).linear;
    const std::size_t in = full.in_features(), out = full.out_features(), k = roi.indices.size();
    RoiHead<T> rh;
    rh.name = name;
    rh.hemisphere = roi.hemisphere;
    rh.indices = roi.indices;
    rh.linear = Linear<T>("roi." + name, in, k);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t v = roi.indices[j];
      if (v >= out)
        throw ValidationError("ROI '" + name + "' vertex " + std::to_string(v) + " outside " + std::to_string(out) + " outputs");
      for (std::size_t r = 0; r < in; ++r) rh.linear.weight.value[r * k + j] = full.weight.value[r * out + v];
      rh.linear.bias.value[j] = full.bias.value[v];
    }
    roi_heads_.push_back(std::move(rh));
  }
}

template <typename T>
data::RoiTable Encoder<T>::roi_table() const {
  data::RoiTable table;
  for (const auto& r : roi_heads_) table[r.name] = {r.hemisphere, r.indices};
  return table;
}

template <typename T>
void Encoder<T>::set_extractor_trainable(bool trainable) {
  for (auto* p : extractor_parameters()) p->trainable = trainable;
}

template <typename T>
Var<T> Encoder<T>::extract_features(Tape<T>& tape, const Tensor<T>& images, Mode mode) {
  return extract_features(tape, tape.constant(images), mode);
}

template <typename T>
Var<T> Encoder<T>::extract_features(Tape<T>& tape, Var<T> images, Mode mode) {
  const auto& d = config_.image;
  const auto& shape = images.shape();
  if (shape.size() != 4 || shape[1] != d.channels || shape[2] != d.height || shape[3] != d.width)
    throw ShapeError("extract_features: images " + nd::shape_str(shape) + " do not match configured [B," +
                     std::to_string(d.channels) + "," + std::to_string(d.height) + "," + std::to_string(d.width) + "]");
  const std::size_t batch = shape[0];
  const Activation act = config_.extractor.activation;
  Var<T> x = images;
  if (config_.extractor.kind == ExtractorKind::mlp) {
    x = nd::reshape(x, {batch, d.pixels()});
    for (auto& layer : mlp_layers_) x = activate(layer(tape, x), act);
  } else {
    for (std::size_t i = 0; i < conv_weights_.size(); ++i) {
      x = nd::conv2d(x, tape.param(conv_weights_[i]), tape.param(conv_biases_[i]), 2, 1);
      x = activate(nd::batch_norm_spatial(x, conv_norms_[i], mode), act);
    }
    x = nd::global_avg_pool(x);
  }
  return feature_out_(tape, x);
}

template <typename T>
Var<T> Encoder<T>::embed_subjects(Tape<T>& tape, std::span<const std::size_t> subjects) {
  for (auto s : subjects)
    if (s >= config_.n_subjects)
      throw ArgumentError("subject index " + std::to_string(s) + " outside embedding table of " +
                          std::to_string(config_.n_subjects));
  return nd::gather_rows(tape.param(embedding_), subjects);
}

template <typename T>
typename Encoder<T>::Output Encoder<T>::forward(Tape<T>& tape, const Tensor<T>& images,
                                                std::span<const std::size_t> subjects, Mode mode) {
  if (images.rank() < 1 || images.dim(0) != subjects.size())
    throw ShapeError("forward: " + std::to_string(subjects.size()) + " subject indices for image batch " +
                     nd::shape_str(images.shape()));
  Var<T> f = nd::concat_last(extract_features(tape, images, mode), embed_subjects(tape, subjects));
  Var<T> norm_lh = nd::batch_norm(f, head_lh_.bn, mode);
  Var<T> norm_rh = nd::batch_norm(f, head_rh_.bn, mode);
  Output out{head_lh_.linear(tape, norm_lh), head_rh_.linear(tape, norm_rh), {}};
  for (auto& r : roi_heads_)
    out.rois.emplace(r.name, r.linear(tape, r.hemisphere == data::Hemisphere::lh ? norm_lh : norm_rh));
  return out;
}

template <typename T>
Var<T> Encoder<T>::aggregate(const Output& out, data::Hemisphere h) const {
  std::vector<std::pair<Var<T>, std::span<const std::size_t>>> parts;
  for (const auto& r : roi_heads_)
    if (r.hemisphere == h) parts.emplace_back(out.rois.at(r.name), std::span<const std::size_t>(r.indices));
  return aggregate_prediction(h == data::Hemisphere::lh ? out.lh : out.rh, parts);
}

template <typename T>
template <typename Fn>
void Encoder<T>::for_each_tensor(Fn&& fn) {
  auto param = [&](Parameter<T>& p) { fn(p.name, p.value, &p); };
  auto norm = [&](nd::BatchNorm<T>& bn) {
    param(bn.gamma);
    param(bn.beta);
    const std::string prefix = bn.gamma.name.substr(0, bn.gamma.name.size() - std::string(".gamma").size());
    fn(prefix + ".running_mean", bn.running_mean, nullptr);
    fn(prefix + ".running_var", bn.running_var, nullptr);
  };
  for (auto& l : mlp_layers_) {
    param(l.weight);
    param(l.bias);
  }
  for (std::size_t i = 0; i < conv_weights_.size(); ++i) {
    param(conv_weights_[i]);
    param(conv_biases_[i]);
    norm(conv_norms_[i]);
  }
  param(feature_out_.weight);
  param(feature_out_.bias);
  param(embedding_);
  for (auto h : {data::Hemisphere::lh, data::Hemisphere::rh}) {
    norm(head(h).bn);
    param(head(h).linear.weight);
    param(head(h).linear.bias);
  }
  for (auto& r : roi_heads_) {
    param(r.linear.weight);
    param(r.linear.bias);
  }
}

template <typename T>
std::vector<Parameter<T>*> Encoder<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for_each_tensor([&](const std::string&, Tensor<T>&, Parameter<T>* p) {
    if (p) out.push_back(p);
  });
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Encoder<T>::extractor_parameters() {
  std::vector<Parameter<T>*> out;
  for_each_tensor([&](const std::string& name, Tensor<T>&, Parameter<T>* p) {
    if (p && name.rfind("extractor.", 0) == 0) out.push_back(p);
  });
  return out;
}

template <typename T>
std::map<std::string, Tensor<T>> Encoder<T>::state() const {
  std::map<std::string, Tensor<T>> out;
  const_cast<Encoder*>(this)->for_each_tensor(
      [&](const std::string& name, Tensor<T>& t, Parameter<T>*) { out.emplace(name, t); });
  return out;
}

template <typename T>
void Encoder<T>::load_state(const std::map<std::string, Tensor<T>>& state) {
  for_each_tensor([&](const std::string& name, Tensor<T>& t, Parameter<T>*) {
    auto it = state.find(name);
    if (it == state.end()) throw ValidationError("model state is missing '" + name + "'");
    if (it->second.shape() != t.shape())
      throw ValidationError("model state '" + name + "' has shape " + nd::shape_str(it->second.shape()) + ", expected " +
                            nd::shape_str(t.shape()));
    t = it->second;
  });
}

template struct Linear<float>;
template struct Linear<double>;
template class Encoder<float>;
template class Encoder<double>;
template Var<float> aggregate_prediction(Var<float>, const std::vector<std::pair<Var<float>, std::span<const std::size_t>>>&);
template Var<double> aggregate_prediction(Var<double>,
                                          const std::vector<std::pair<Var<double>, std::span<const std::size_t>>>&);

}  // namespace brainenc::model

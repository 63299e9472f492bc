#include "brainenc/config.hpp"

#include "brainenc/dataset.hpp"
#include "brainenc/json_util.hpp"

namespace brainenc::config {

using nlohmann::json;

model::EncoderConfig model_section_from_json(const json& j) {
  StrictObject o(j, "model", {"extractor", "embedding_dim"});
  model::EncoderConfig m;
  m.embedding_dim = o.get("embedding_dim", m.embedding_dim);
  if (o.has("extractor")) {
    StrictObject e(o.raw("extractor"), "model.extractor", {"kind", "widths", "activation", "feature_dim"});
    auto& x = m.extractor;
    if (e.has("kind")) {
      const auto kind = e.get<std::string>("kind", "");
      if (kind != "mlp" && kind != "conv") throw ConfigError("'model.extractor.kind' must be mlp or conv, got '" + kind + "'");
      x.kind = kind == "mlp" ? model::ExtractorKind::mlp : model::ExtractorKind::conv;
    }
    if (e.has("activation")) {
      const auto act = e.get<std::string>("activation", "");
      if (act != "relu" && act != "tanh") throw ConfigError("'model.extractor.activation' must be relu or tanh, got '" + act + "'");
      x.activation = act == "relu" ? model::Activation::relu : model::Activation::tanh;
    }
    if (e.has("widths")) {
      const auto& w = e.raw("widths");
      if (!w.is_array()) throw ConfigError("'model.extractor.widths' must be an array of positive integers");
      x.widths.clear();
      for (const auto& v : w) {
        if (!v.is_number_integer() || v.get<std::int64_t>() <= 0)
          throw ConfigError("'model.extractor.widths' must be an array of positive integers");
        x.widths.push_back(v.get<std::size_t>());
      }
    }
    x.feature_dim = e.get("feature_dim", x.feature_dim);
  }
  // Validate with placeholder data-derived fields.
  auto probe = m;
  probe.image = {1, 1, 1};
  probe.lh_outputs = probe.rh_outputs = 1;
  probe.validate();
  return m;
}

json model_section_to_json(const model::EncoderConfig& m) {
  const json full = model::to_json(m);
  return {{"extractor", full.at("extractor")}, {"embedding_dim", m.embedding_dim}};
}

RunConfig run_config_from_json(const json& j) {
  StrictObject o(j, "", {"data", "model", "train", "loss", "ensemble"});
  RunConfig c;
  if (o.has("data")) {
    StrictObject d(o.raw("data"), "data", {"root"});
    c.data_root = d.get<std::string>("root", "");
  }
  if (o.has("model")) c.model = model_section_from_json(o.raw("model"));
  const json train = o.has("train") ? o.raw("train") : json::object();
  const json loss = o.has("loss") ? o.raw("loss") : json::object();
  if (train.contains("loss") && o.has("loss")) throw ConfigError("loss settings given both in 'loss' and 'train.loss'");
  c.train = train::train_config_from_json(train, loss);
  if (o.has("ensemble")) {
    StrictObject e(o.raw("ensemble"), "ensemble", {"mode", "members"});
    if (e.has("mode")) c.ensemble_mode = ens::parse_weight_mode(e.get<std::string>("mode", "score"));
    if (e.has("members")) {
      c.ensemble_members = e.raw("members");
      if (!c.ensemble_members.is_array()) throw ConfigError("'ensemble.members' must be an array");
      if (!c.ensemble_members.empty())
        ens::ensemble_spec_from_json({{"mode", ens::to_string(c.ensemble_mode)}, {"members", c.ensemble_members}});
    }
  }
  return c;
}

json to_json(const RunConfig& c) {
  json train = train::to_json(c.train);
  const json loss = train.at("loss");
  train.erase("loss");
  return {{"data", {{"root", c.data_root}}},
          {"model", model_section_to_json(c.model)},
          {"train", train},
          {"loss", loss},
          {"ensemble", {{"mode", ens::to_string(c.ensemble_mode)}, {"members", c.ensemble_members}}}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = data::read_json(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j);
}

}  // namespace brainenc::config

#include "brainenc/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "brainenc/evaluation.hpp"
#include "brainenc/json_util.hpp"

namespace brainenc::ens {

using data::Hemisphere;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::size_t parse_subject(const std::string& key, const std::string& where) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(key, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != key.size()) throw ConfigError("'" + where + "': subject key '" + key + "' is not an index");
  return v;
}

}  // namespace

std::string to_string(WeightMode m) {
  switch (m) {
    case WeightMode::uniform: return "uniform";
    case WeightMode::score: return "score";
    case WeightMode::explicit_weights: return "explicit";
  }
  return "score";
}

WeightMode parse_weight_mode(const std::string& s) {
  if (s == "uniform") return WeightMode::uniform;
  if (s == "score") return WeightMode::score;
  if (s == "explicit") return WeightMode::explicit_weights;
  throw ConfigError("unknown ensemble mode '" + s + "' (expected uniform, score or explicit)");
}

void EnsembleSpec::validate() const {
  if (members.empty()) throw ConfigError("ensemble: at least one member is required");
  if (mode == WeightMode::explicit_weights) {
    double total = 0.0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (!members[i].weight) throw ConfigError("ensemble: member " + std::to_string(i) + " needs a weight in explicit mode");
      const double w = *members[i].weight;
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("ensemble: member " + std::to_string(i) + " weight must be >= 0");
      total += w;
    }
    if (total <= 0.0) throw ConfigError("ensemble: explicit weights are all zero");
  }
}

EnsembleSpec ensemble_spec_from_json(const json& j, const fs::path& base) {
  StrictObject o(j, "ensemble", {"mode", "members"});
  EnsembleSpec spec;
  if (o.has("mode")) spec.mode = parse_weight_mode(o.get<std::string>("mode", "score"));
  if (!o.has("members") || !o.raw("members").is_array()) throw ConfigError("'ensemble.members' must be an array");
  const auto& members = o.raw("members");
  for (std::size_t i = 0; i < members.size(); ++i) {
    const std::string path = "ensemble.members[" + std::to_string(i) + "]";
    StrictObject m(members[i], path, {"predictions", "scores", "report", "weight"});
    Member member;
    member.predictions = resolve(base, m.require<std::string>("predictions"));
    if (m.has("weight")) member.weight = m.get("weight", 0.0);
    if (m.has("scores")) {
      const auto& s = m.raw("scores");
      if (!s.is_object()) throw ConfigError("'" + path + ".scores' must be an object");
      for (const auto& [key, value] : s.items()) {
        const std::size_t subject = parse_subject(key, path + ".scores");
        StrictObject h(value, path + ".scores." + key, {"lh", "rh"});
        member.scores[{subject, Hemisphere::lh}] = h.require<double>("lh");
        member.scores[{subject, Hemisphere::rh}] = h.require<double>("rh");
      }
    }
    if (m.has("report")) {
      const auto report = eval::report_from_json(data::read_json(resolve(base, m.require<std::string>("report"))));
      if (report.meta.contains("split") && report.meta["split"] == "test")
        throw ConfigError("'" + path + ".report' holds test scores; weights must come from validation");
      for (const auto& s : report.subjects) {
        member.scores.emplace(Key{s.id, Hemisphere::lh}, s.lh.m);
        member.scores.emplace(Key{s.id, Hemisphere::rh}, s.rh.m);
      }
    }
    spec.members.push_back(std::move(member));
  }
  spec.validate();
  return spec;
}

json to_json(const EnsembleSpec& spec) {
  json members = json::array();
  for (const auto& m : spec.members) {
    json entry = {{"predictions", m.predictions.string()}};
    if (!m.scores.empty()) {
      json scores = json::object();
      for (const auto& [key, v] : m.scores) scores[std::to_string(key.first)][data::to_string(key.second)] = v;
      entry["scores"] = scores;
    }
    if (m.weight) entry["weight"] = *m.weight;
    members.push_back(entry);
  }
  return {{"mode", to_string(spec.mode)}, {"members", members}};
}

double weight_sum(const std::vector<double>& w) {
  if (w.empty()) return 0.0;
  const auto largest = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
  std::vector<double> rest;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (i != largest) rest.push_back(w[i]);
  std::sort(rest.begin(), rest.end());
  const double s = std::accumulate(rest.begin(), rest.end(), 0.0);
  return s + w[largest];
}

std::vector<double> normalize_weights(const std::vector<double>& raw) {
  if (raw.empty()) throw ArgumentError("normalize_weights: no weights");
  for (double v : raw)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ArgumentError("normalize_weights: weights must be finite and non-negative");
  const std::size_t n = raw.size();
  std::vector<double> sorted = raw;
  std::sort(sorted.begin(), sorted.end());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  std::vector<double> w(n);
  if (total <= 0.0) {
    w.assign(n, 1.0 / static_cast<double>(n));
  } else {
    for (std::size_t i = 0; i < n; ++i) w[i] = raw[i] / total;
  }
  if (weight_sum(w) == 1.0) return w;
  // The largest weight absorbs the remainder (order-independent choice).
  const auto largest = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
  std::vector<double> rest;
  for (std::size_t i = 0; i < n; ++i)
    if (i != largest) rest.push_back(w[i]);
  std::sort(rest.begin(), rest.end());
  w[largest] = 1.0 - std::accumulate(rest.begin(), rest.end(), 0.0);
  return w;
}

std::vector<double> score_weights(const std::vector<double>& scores) {
  std::vector<double> clipped;
  for (double s : scores) {
    if (std::isnan(s)) throw ArgumentError("score_weights: NaN score");
    clipped.push_back(std::max(s, 0.0));
  }
  return normalize_weights(clipped);
}

Weights compute_weights(const EnsembleSpec& spec, const std::vector<std::size_t>& subjects) {
  spec.validate();
  Weights out;
  for (auto s : subjects)
    for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
      std::vector<double> raw;
      for (std::size_t i = 0; i < spec.members.size(); ++i) {
        const auto& m = spec.members[i];
        switch (spec.mode) {
          case WeightMode::uniform: raw.push_back(1.0); break;
          case WeightMode::explicit_weights: raw.push_back(*m.weight); break;
          case WeightMode::score: {
            auto it = m.scores.find({s, h});
            if (it == m.scores.end())
              throw ValidationError("ensemble member " + std::to_string(i) + " has no validation score for subject " +
                                    std::to_string(s) + " " + data::to_string(h));
            raw.push_back(it->second);
            break;
          }
        }
      }
      out[{s, h}] = spec.mode == WeightMode::score ? score_weights(raw) : normalize_weights(raw);
    }
  return out;
}

PredictionSet blend(const std::vector<PredictionSet>& members, const Weights& weights) {
  if (members.empty()) throw ArgumentError("blend: no members");
  const auto& first = members.front();
  for (std::size_t i = 1; i < members.size(); ++i) {
    const auto& m = members[i];
    const std::string who = "ensemble member " + std::to_string(i);
    if (m.split != first.split) throw ValidationError(who + " is on split " + data::to_string(m.split) + ", member 0 on " +
                                                      data::to_string(first.split));
    if (m.folds.n_folds != first.folds.n_folds || m.folds.fold != first.folds.fold || m.folds.seed != first.folds.seed)
      throw ValidationError(who + " uses a different fold assignment");
    if (m.subjects.size() != first.subjects.size()) throw ValidationError(who + " covers a different set of subjects");
  }
  PredictionSet out;
  out.model_id = "ensemble";
  out.split = first.split;
  out.folds = first.folds;
  json wjson = json::object();
  for (const auto& ref : first.subjects) {
    SubjectPrediction sp;
    sp.subject = ref.subject;
    sp.records = ref.records;
    std::vector<const SubjectPrediction*> parts;
    for (std::size_t i = 0; i < members.size(); ++i) {
      const auto* p = members[i].find(ref.subject);
      if (!p) throw ValidationError("ensemble member " + std::to_string(i) + " lacks subject " + std::to_string(ref.subject));
      if (p->records != ref.records)
        throw ValidationError("ensemble member " + std::to_string(i) + " has different records for subject " +
                              std::to_string(ref.subject));
      parts.push_back(p);
    }
    for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
      auto it = weights.find({ref.subject, h});
      if (it == weights.end())
        throw ValidationError("no ensemble weights for subject " + std::to_string(ref.subject) + " " + data::to_string(h));
      const auto& w = it->second;
      if (w.size() != members.size()) throw ValidationError("ensemble weight count does not match member count");
      const auto& shape = ref.hemisphere(h).shape();
      for (std::size_t i = 0; i < parts.size(); ++i)
        if (parts[i]->hemisphere(h).shape() != shape)
          throw ValidationError("ensemble member " + std::to_string(i) + " subject " + std::to_string(ref.subject) + " " +
                                data::to_string(h) + " has shape " + nd::shape_str(parts[i]->hemisphere(h).shape()) +
                                ", member 0 has " + nd::shape_str(shape));
      nd::Tensor<float> y(shape);
      std::vector<double> terms(parts.size());
      for (std::size_t e = 0; e < y.size(); ++e) {
        for (std::size_t i = 0; i < parts.size(); ++i) terms[i] = w[i] * static_cast<double>(parts[i]->hemisphere(h)[e]);
        std::sort(terms.begin(), terms.end());
        y[e] = static_cast<float>(std::accumulate(terms.begin(), terms.end(), 0.0));
      }
      (h == Hemisphere::lh ? sp.lh : sp.rh) = std::move(y);
      wjson[std::to_string(ref.subject)][data::to_string(h)] = w;
    }
    out.subjects.push_back(std::move(sp));
  }
  json ids = json::array();
  for (const auto& m : members) ids.push_back({{"model_id", m.model_id}, {"provenance", m.provenance}});
  out.provenance = {{"members", ids}, {"weights", wjson}};
  return out;
}

PredictionSet run_ensemble(const EnsembleSpec& spec) {
  spec.validate();
  std::vector<PredictionSet> sets;
  for (const auto& m : spec.members) sets.push_back(load_predictions(m.predictions));
  std::vector<std::size_t> subjects;
  for (const auto& s : sets.front().subjects) subjects.push_back(s.subject);
  auto out = blend(sets, compute_weights(spec, subjects));
  out.provenance["mode"] = to_string(spec.mode);
  for (std::size_t i = 0; i < spec.members.size(); ++i)
    out.provenance["members"][i]["path"] = spec.members[i].predictions.string();
  return out;
}

}  // namespace brainenc::ens

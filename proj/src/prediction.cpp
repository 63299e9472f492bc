#include "brainenc/prediction.hpp"

#include "brainenc/nenc.hpp"

namespace brainenc {

namespace fs = std::filesystem;
using nlohmann::json;

const SubjectPrediction* PredictionSet::find(std::size_t subject) const {
  for (const auto& s : subjects)
    if (s.subject == subject) return &s;
  return nullptr;
}

void save_predictions(const PredictionSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  json subjects = json::array();
  for (const auto& s : set.subjects) {
    json entry = {{"index", s.subject}, {"records", s.records}};
    for (auto h : {data::Hemisphere::lh, data::Hemisphere::rh}) {
      char name[48];
      std::snprintf(name, sizeof name, "subj%02zu_%s.nenc", s.subject + 1, data::to_string(h).c_str());
      data::write_array(dir / name, s.hemisphere(h));
      entry[data::to_string(h)] = {{"file", name}, {"shape", s.hemisphere(h).shape()}};
    }
    subjects.push_back(std::move(entry));
  }
  json meta = {{"model_id", set.model_id},
               {"split", data::to_string(set.split)},
               {"folds", {{"n_folds", set.folds.n_folds}, {"fold", set.folds.fold}, {"seed", set.folds.seed}}},
               {"subjects", subjects},
               {"provenance", set.provenance}};
  data::write_json(dir / "predictions.json", meta);
}

PredictionSet load_predictions(const fs::path& dir) {
  const json meta = data::read_json(dir / "predictions.json");
  PredictionSet set;
  try {
    set.model_id = meta.at("model_id").get<std::string>();
    set.split = data::parse_split(meta.at("split").get<std::string>());
    const auto& f = meta.at("folds");
    set.folds = {f.at("n_folds").get<std::size_t>(), f.at("fold").get<std::size_t>(), f.at("seed").get<std::uint64_t>()};
    set.provenance = meta.value("provenance", json::object());
    for (const auto& entry : meta.at("subjects")) {
      SubjectPrediction s;
      s.subject = entry.at("index").get<std::size_t>();
      s.records = entry.at("records").get<std::vector<std::size_t>>();
      for (auto h : {data::Hemisphere::lh, data::Hemisphere::rh}) {
        const auto& block = entry.at(data::to_string(h));
        auto array = data::read_array(dir / block.at("file").get<std::string>());
        if (array.shape() != block.at("shape").get<nd::Shape>())
          throw ValidationError("predictions: subject " + std::to_string(s.subject) + " " + data::to_string(h) +
                                " array shape disagrees with metadata");
        (h == data::Hemisphere::lh ? s.lh : s.rh) = std::move(array);
      }
      set.subjects.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ValidationError("predictions.json: " + std::string(e.what()));
  } catch (const ArgumentError& e) {
    throw ValidationError("predictions.json: " + std::string(e.what()));
  }
  return set;
}

void validate_predictions(const PredictionSet& set, const data::Dataset& dataset) {
  for (const auto& s : set.subjects) {
    const std::string who = "subject " + std::to_string(s.subject);
    if (s.subject >= dataset.subjects.size()) throw ValidationError(who + ": not present in dataset");
    const auto& spec = dataset.subjects[s.subject].spec;
    const auto expected = dataset.split_indices(s.subject, set.split, set.folds);
    if (s.records != expected)
      throw ValidationError(who + ": prediction records do not match the " + data::to_string(set.split) + " split");
    for (auto h : {data::Hemisphere::lh, data::Hemisphere::rh}) {
      const nd::Shape want{s.records.size(), spec.vertices(h)};
      if (s.hemisphere(h).shape() != want)
        throw ValidationError(who + " " + data::to_string(h) + ": prediction shape " + nd::shape_str(s.hemisphere(h).shape()) +
                              ", expected " + nd::shape_str(want));
    }
  }
}

}  // namespace brainenc

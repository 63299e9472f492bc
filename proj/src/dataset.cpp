#include "brainenc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "brainenc/nenc.hpp"

namespace brainenc::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Hemisphere h) { return h == Hemisphere::lh ? "lh" : "rh"; }

Hemisphere parse_hemisphere(const std::string& s) {
  if (s == "lh") return Hemisphere::lh;
  if (s == "rh") return Hemisphere::rh;
  throw ValidationError("unknown hemisphere '" + s + "'");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::all: return "all";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "all") return Split::all;
  throw ArgumentError("unknown split '" + s + "' (expected train, val, test or all)");
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError("missing file: " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

json manifest_to_json(const DatasetManifest& m) {
  json subjects = json::array();
  for (const auto& s : m.subjects) {
    subjects.push_back({{"index", s.subject_index},
                        {"dir", s.dir},
                        {"lh_vertices", s.lh_vertices},
                        {"rh_vertices", s.rh_vertices},
                        {"n_samples", s.n_samples},
                        {"n_test", s.n_test}});
  }
  return {{"version", m.version},
          {"image", {{"channels", m.image.channels}, {"height", m.image.height}, {"width", m.image.width}}},
          {"normalization", {{"mean", m.channel_mean}, {"std", m.channel_std}}},
          {"seed", m.seed},
          {"subjects", subjects}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    m.version = j.at("version").get<std::uint32_t>();
    const auto& img = j.at("image");
    m.image.channels = img.at("channels").get<std::size_t>();
    m.image.height = img.at("height").get<std::size_t>();
    m.image.width = img.at("width").get<std::size_t>();
    m.channel_mean = j.at("normalization").at("mean").get<std::vector<double>>();
    m.channel_std = j.at("normalization").at("std").get<std::vector<double>>();
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& s : j.at("subjects")) {
      SubjectSpec spec;
      spec.subject_index = s.at("index").get<std::size_t>();
      spec.dir = s.value("dir", std::string{});
      spec.lh_vertices = s.at("lh_vertices").get<std::size_t>();
      spec.rh_vertices = s.at("rh_vertices").get<std::size_t>();
      spec.n_samples = s.at("n_samples").get<std::size_t>();
      spec.n_test = s.value("n_test", std::size_t{0});
      m.subjects.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  validate_manifest(m);
  return m;
}

void validate_manifest(const DatasetManifest& m) {
  if (m.version != 1) throw ValidationError("manifest: unsupported version " + std::to_string(m.version));
  if (m.image.channels == 0 || m.image.height == 0 || m.image.width == 0)
    throw ValidationError("manifest: image dimensions must be positive");
  if (m.channel_mean.size() != m.image.channels || m.channel_std.size() != m.image.channels)
    throw ValidationError("manifest: normalization statistics must have one entry per channel");
  for (std::size_t c = 0; c < m.image.channels; ++c) {
    if (!std::isfinite(m.channel_mean[c])) throw ValidationError("manifest: normalization mean is not finite");
    if (!std::isfinite(m.channel_std[c]) || m.channel_std[c] <= 0.0)
      throw ValidationError("manifest: normalization std of channel " + std::to_string(c) + " must be positive");
  }
  if (m.subjects.empty()) throw ValidationError("manifest: no subjects");
  for (std::size_t i = 0; i < m.subjects.size(); ++i) {
    const auto& s = m.subjects[i];
    const std::string who = "subject " + std::to_string(i);
    if (s.subject_index != i) throw ValidationError(who + ": index must equal its position, got " + std::to_string(s.subject_index));
    if (s.lh_vertices == 0) throw ValidationError(who + ": lh_vertices must be positive");
    if (s.rh_vertices == 0) throw ValidationError(who + ": rh_vertices must be positive");
    if (s.n_samples == 0) throw ValidationError(who + ": n_samples must be positive");
    if (s.n_test >= s.n_samples) throw ValidationError(who + ": n_test must be smaller than n_samples");
  }
}

void validate_rois(const SubjectSpec& spec) {
  const std::string who = "subject " + std::to_string(spec.subject_index);
  for (const auto& [name, roi] : spec.rois) {
    const std::size_t limit = spec.vertices(roi.hemisphere);
    if (roi.indices.empty()) throw ValidationError(who + ": roi '" + name + "' is empty");
    for (std::size_t k = 0; k < roi.indices.size(); ++k) {
      if (roi.indices[k] >= limit)
        throw ValidationError(who + ": roi '" + name + "' index " + std::to_string(roi.indices[k]) +
                              " exceeds " + to_string(roi.hemisphere) + " vertex count " + std::to_string(limit));
      if (k > 0 && roi.indices[k] <= roi.indices[k - 1])
        throw ValidationError(who + ": roi '" + name + "' indices must be sorted and unique");
    }
  }
}

json rois_to_json(const RoiTable& rois) {
  json j = json::object();
  for (const auto& [name, roi] : rois) j[name] = {{"hemisphere", to_string(roi.hemisphere)}, {"indices", roi.indices}};
  return j;
}

RoiTable rois_from_json(const json& j) {
  RoiTable rois;
  try {
    for (const auto& [name, v] : j.items()) {
      Roi roi;
      roi.hemisphere = parse_hemisphere(v.at("hemisphere").get<std::string>());
      roi.indices = v.at("indices").get<std::vector<std::size_t>>();
      rois.emplace(name, std::move(roi));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("rois: ") + e.what());
  }
  return rois;
}

std::vector<std::size_t> FoldAssignment::train_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] != fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldAssignment::val_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) out.push_back(i);
  return out;
}

FoldAssignment make_folds(std::size_t n_samples, std::size_t n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ArgumentError("make_folds: n_folds must be at least 2");
  if (n_samples < n_folds)
    throw ArgumentError("make_folds: " + std::to_string(n_samples) + " samples cannot fill " + std::to_string(n_folds) + " folds");
  std::vector<std::size_t> perm(n_samples);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  FoldAssignment f;
  f.n_folds = n_folds;
  f.seed = seed;
  f.fold_of.resize(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) f.fold_of[perm[i]] = i % n_folds;
  return f;
}

json folds_to_json(const FoldAssignment& f) {
  return {{"n_folds", f.n_folds}, {"seed", f.seed}, {"fold_of", f.fold_of}};
}

FoldAssignment folds_from_json(const json& j) {
  FoldAssignment f;
  try {
    f.n_folds = j.at("n_folds").get<std::size_t>();
    f.seed = j.value("seed", std::uint64_t{0});
    f.fold_of = j.at("fold_of").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("folds: ") + e.what());
  }
  if (f.n_folds < 2) throw ValidationError("folds: n_folds must be at least 2");
  for (auto k : f.fold_of)
    if (k >= f.n_folds) throw ValidationError("folds: fold index " + std::to_string(k) + " out of range");
  return f;
}

const SubjectData& Dataset::subject(std::size_t index) const {
  if (index >= subjects.size())
    throw ArgumentError("subject " + std::to_string(index) + " not in dataset of " + std::to_string(subjects.size()));
  return subjects[index];
}

std::vector<std::size_t> Dataset::split_indices(std::size_t subject_index, Split split, const FoldSpec& spec) const {
  const auto& s = subject(subject_index);
  const std::size_t pool = s.spec.pool_size();
  std::vector<std::size_t> out;
  if (split == Split::all) {
    out.resize(s.spec.n_samples);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  if (split == Split::test) {
    for (std::size_t i = pool; i < s.spec.n_samples; ++i) out.push_back(i);
    return out;
  }
  FoldAssignment folds = s.folds ? *s.folds : make_folds(pool, spec.n_folds, spec.seed);
  if (spec.fold >= folds.n_folds)
    throw ArgumentError("fold " + std::to_string(spec.fold) + " out of range for " + std::to_string(folds.n_folds) + " folds");
  return split == Split::train ? folds.train_indices(spec.fold) : folds.val_indices(spec.fold);
}

namespace {

fs::path subject_dir(const fs::path& root, const SubjectSpec& s) {
  if (!s.dir.empty()) return root / s.dir;
  char buf[32];
  std::snprintf(buf, sizeof buf, "subj%02zu", s.subject_index + 1);
  return root / "subjects" / buf;
}

void check_shape(const std::string& who, const std::string& field, const nd::Tensor<float>& t, const nd::Shape& want) {
  if (t.shape() != want)
    throw ValidationError(who + ": " + field + " has shape " + nd::shape_str(t.shape()) + ", expected " + nd::shape_str(want));
}

void check_finite(const std::string& who, const std::string& field, std::span<const float> values) {
  for (float v : values)
    if (!std::isfinite(v)) throw ValidationError(who + ": " + field + " contains non-finite values");
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
  Dataset ds;
  ds.manifest = manifest_from_json(read_json(root / "manifest.json"));
  const auto& img = ds.manifest.image;
  for (const auto& spec_in : ds.manifest.subjects) {
    SubjectData sd;
    sd.spec = spec_in;
    const std::string who = "subject " + std::to_string(spec_in.subject_index);
    const fs::path dir = subject_dir(root, spec_in);
    const std::size_t n = spec_in.n_samples;

    sd.images = read_array(dir / "images.nenc");
    check_shape(who, "images", sd.images, {n, img.channels, img.height, img.width});
    for (float v : sd.images.data())
      if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError(who + ": images must hold values in [0,1]");

    sd.lh = read_array(dir / "lh.nenc");
    check_shape(who, "lh", sd.lh, {n, spec_in.lh_vertices});
    check_finite(who, "lh", sd.lh.data());
    sd.rh = read_array(dir / "rh.nenc");
    check_shape(who, "rh", sd.rh, {n, spec_in.rh_vertices});
    check_finite(who, "rh", sd.rh.data());

    for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
      const std::string field = "nc_" + to_string(h);
      auto nc = read_array(dir / (field + ".nenc"));
      check_shape(who, field, nc, {spec_in.vertices(h)});
      for (float v : nc.data())
        if (!std::isfinite(v) || v < 0.0f) throw ValidationError(who + ": " + field + " must be finite and non-negative");
      (h == Hemisphere::lh ? sd.spec.noise_ceiling_lh : sd.spec.noise_ceiling_rh) = nc.storage();
    }

    sd.spec.rois = rois_from_json(read_json(dir / "rois.json"));
    validate_rois(sd.spec);

    if (fs::exists(dir / "folds.json")) {
      auto folds = folds_from_json(read_json(dir / "folds.json"));
      if (folds.fold_of.size() != spec_in.pool_size())
        throw ValidationError(who + ": folds cover " + std::to_string(folds.fold_of.size()) + " samples, expected " +
                              std::to_string(spec_in.pool_size()));
      sd.folds = std::move(folds);
    }
    ds.subjects.push_back(std::move(sd));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& root) {
  validate_manifest(dataset.manifest);
  fs::create_directories(root);
  DatasetManifest manifest = dataset.manifest;
  for (std::size_t i = 0; i < dataset.subjects.size(); ++i) {
    auto& spec = manifest.subjects.at(i);
    const auto& sd = dataset.subjects[i];
    if (spec.dir.empty()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "subjects/subj%02zu", spec.subject_index + 1);
      spec.dir = buf;
    }
    const fs::path dir = root / spec.dir;
    fs::create_directories(dir);
    write_array(dir / "images.nenc", sd.images);
    write_array(dir / "lh.nenc", sd.lh);
    write_array(dir / "rh.nenc", sd.rh);
    write_array(dir / "nc_lh.nenc", nd::Tensor<float>({sd.spec.noise_ceiling_lh.size()}, sd.spec.noise_ceiling_lh));
    write_array(dir / "nc_rh.nenc", nd::Tensor<float>({sd.spec.noise_ceiling_rh.size()}, sd.spec.noise_ceiling_rh));
    write_json(dir / "rois.json", rois_to_json(sd.spec.rois));
    if (sd.folds) write_json(dir / "folds.json", folds_to_json(*sd.folds));
  }
  write_json(root / "manifest.json", manifest_to_json(manifest));
}

nd::Tensor<float> normalize_image(std::span<const float> image, const DatasetManifest& manifest) {
  const auto& d = manifest.image;
  if (image.size() != d.pixels())
    throw ShapeError("normalize_image: image has " + std::to_string(image.size()) + " values, manifest expects " +
                     std::to_string(d.pixels()));
  nd::Tensor<float> out({d.channels, d.height, d.width});
  const std::size_t area = d.height * d.width;
  for (std::size_t c = 0; c < d.channels; ++c) {
    const double mean = manifest.channel_mean[c], sd = manifest.channel_std[c];
    for (std::size_t k = 0; k < area; ++k)
      out[c * area + k] = static_cast<float>((static_cast<double>(image[c * area + k]) - mean) / sd);
  }
  return out;
}

nd::Tensor<float> gather_images(const SubjectData& subject, std::span<const std::size_t> records,
                                const DatasetManifest& manifest) {
  const auto& d = manifest.image;
  const std::size_t px = d.pixels();
  nd::Tensor<float> out({records.size(), d.channels, d.height, d.width});
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto img = normalize_image(subject.images.data().subspan(records[i] * px, px), manifest);
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * px));
  }
  return out;
}

nd::Tensor<float> gather_rows(const nd::Tensor<float>& matrix, std::span<const std::size_t> records) {
  const std::size_t cols = matrix.cols();
  nd::Tensor<float> out({records.size(), cols});
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i] >= matrix.rows()) throw ArgumentError("gather_rows: record index out of range");
    std::copy_n(matrix.data().begin() + static_cast<std::ptrdiff_t>(records[i] * cols), cols,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  return out;
}

void compute_channel_stats(Dataset& dataset) {
  const auto& d = dataset.manifest.image;
  const std::size_t area = d.height * d.width;
  std::vector<double> sum(d.channels, 0.0), sq(d.channels, 0.0);
  double count = 0.0;
  for (const auto& s : dataset.subjects) {
    const std::size_t n = s.images.dim(0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d.channels; ++c)
        for (std::size_t k = 0; k < area; ++k) sum[c] += s.images[(i * d.channels + c) * area + k];
    count += static_cast<double>(n * area);
  }
  dataset.manifest.channel_mean.assign(d.channels, 0.0);
  dataset.manifest.channel_std.assign(d.channels, 1.0);
  for (std::size_t c = 0; c < d.channels; ++c) dataset.manifest.channel_mean[c] = sum[c] / count;
  for (const auto& s : dataset.subjects) {
    const std::size_t n = s.images.dim(0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d.channels; ++c)
        for (std::size_t k = 0; k < area; ++k) {
          const double dv = s.images[(i * d.channels + c) * area + k] - dataset.manifest.channel_mean[c];
          sq[c] += dv * dv;
        }
  }
  for (std::size_t c = 0; c < d.channels; ++c) {
    const double sd = std::sqrt(sq[c] / count);
    dataset.manifest.channel_std[c] = sd > 0.0 ? sd : 1.0;
  }
}

}  // namespace brainenc::data

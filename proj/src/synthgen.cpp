#include "brainenc/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "brainenc/json_util.hpp"
#include "brainenc/nenc.hpp"

namespace brainenc::synth {

using data::Hemisphere;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Independent stream per (purpose, index) so adding subjects never shifts
// the draws of existing ones.
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag, std::uint32_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag, index};
  return std::mt19937_64(seq);
}

enum Tag : std::uint32_t { kSharedImages = 1, kUniqueImages, kProjection, kMixing, kSubjectMixing, kBias, kNoise, kRois };

const char* const kRoiNames[] = {"V1v", "V1d", "V2v", "V2d", "V3v", "V3d", "hV4", "FFA-1", "FFA-2", "PPA", "OPA", "EBA"};

// Bilinear upsampling of a coarse Gaussian grid, squashed into (0, 1).
void smooth_image(std::span<float> out, const data::ImageDims& d, std::size_t grid, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> coarse(grid * grid);
  for (std::size_t c = 0; c < d.channels; ++c) {
    for (auto& v : coarse) v = normal(rng);
    for (std::size_t y = 0; y < d.height; ++y) {
      const double fy = d.height > 1 ? static_cast<double>(y) * static_cast<double>(grid - 1) / static_cast<double>(d.height - 1) : 0.0;
      const std::size_t y0 = std::min(static_cast<std::size_t>(fy), grid - 1), y1 = std::min(y0 + 1, grid - 1);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < d.width; ++x) {
        const double fx = d.width > 1 ? static_cast<double>(x) * static_cast<double>(grid - 1) / static_cast<double>(d.width - 1) : 0.0;
        const std::size_t x0 = std::min(static_cast<std::size_t>(fx), grid - 1), x1 = std::min(x0 + 1, grid - 1);
        const double tx = fx - static_cast<double>(x0);
        const double top = coarse[y0 * grid + x0] * (1 - tx) + coarse[y0 * grid + x1] * tx;
        const double bottom = coarse[y1 * grid + x0] * (1 - tx) + coarse[y1 * grid + x1] * tx;
        const double z = top * (1 - ty) + bottom * ty;
        out[(c * d.height + y) * d.width + x] = static_cast<float>(1.0 / (1.0 + std::exp(-1.5 * z)));
      }
    }
  }
}

std::vector<double> project(const GroundTruth& truth, std::span<const float> image) {
  const std::size_t latent = truth.projection.dim(0), pixels = truth.projection.dim(1);
  std::vector<double> out(latent, 0.0);
  for (std::size_t k = 0; k < latent; ++k) {
    double acc = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) acc += truth.projection[k * pixels + p] * static_cast<double>(image[p]);
    out[k] = acc;
  }
  return out;
}

std::vector<double> respond(const HemisphereTruth& h, std::span<const double> phi) {
  const std::size_t v = h.bias.size(), latent = phi.size();
  std::vector<double> out(v);
  for (std::size_t i = 0; i < v; ++i) {
    double acc = h.bias[i];
    for (std::size_t k = 0; k < latent; ++k) acc += h.weight[i * latent + k] * phi[k];
    out[i] = acc;
  }
  return out;
}

json vec_json(const std::vector<std::size_t>& v) { return json(v); }

}  // namespace

void SynthSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("synthetic spec: " + m); };
  if (n_subjects == 0) fail("n_subjects must be at least 1");
  if (samples_per_subject < 2) fail("samples_per_subject must be at least 2");
  if (image.pixels() == 0) fail("image dimensions must be positive");
  if (coarse_grid < 2) fail("coarse_grid must be at least 2");
  if (!(shared_fraction >= 0.0 && shared_fraction <= 1.0)) fail("shared_fraction must lie in [0,1]");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) fail("noise_std must be finite and non-negative");
  if (latent_dim == 0) fail("latent_dim must be at least 1");
  if (!(subject_similarity >= 0.0 && subject_similarity <= 1.0)) fail("subject_similarity must lie in [0,1]");
  if (!(roi_fraction > 0.0 && roi_fraction <= 1.0)) fail("roi_fraction must lie in (0,1]");
  for (const auto* list : {&lh_vertices_per_subject, &rh_vertices_per_subject})
    if (!list->empty() && list->size() != n_subjects) fail("per-subject vertex lists need one entry per subject");
  for (std::size_t s = 0; s < n_subjects; ++s)
    for (auto h : {Hemisphere::lh, Hemisphere::rh})
      if (vertices(s, h) == 0) fail("vertex counts must be positive");
}

std::size_t SynthSpec::vertices(std::size_t subject, Hemisphere h) const {
  const auto& list = h == Hemisphere::lh ? lh_vertices_per_subject : rh_vertices_per_subject;
  if (!list.empty()) return list.at(subject);
  return h == Hemisphere::lh ? lh_vertices : rh_vertices;
}

json to_json(const SynthSpec& s) {
  json j = {{"n_subjects", s.n_subjects},
            {"samples_per_subject", s.samples_per_subject},
            {"test_samples", s.test_samples},
            {"image", {{"channels", s.image.channels}, {"height", s.image.height}, {"width", s.image.width}}},
            {"lh_vertices", s.lh_vertices},
            {"rh_vertices", s.rh_vertices},
            {"shared_fraction", s.shared_fraction},
            {"noise_std", s.noise_std},
            {"latent_dim", s.latent_dim},
            {"subject_similarity", s.subject_similarity},
            {"coarse_grid", s.coarse_grid},
            {"n_rois", s.n_rois},
            {"roi_fraction", s.roi_fraction},
            {"seed", s.seed}};
  if (!s.lh_vertices_per_subject.empty()) j["lh_vertices"] = vec_json(s.lh_vertices_per_subject);
  if (!s.rh_vertices_per_subject.empty()) j["rh_vertices"] = vec_json(s.rh_vertices_per_subject);
  return j;
}

SynthSpec synth_spec_from_json(const json& j) {
  StrictObject o(j, "", {"n_subjects", "samples_per_subject", "test_samples", "image", "lh_vertices", "rh_vertices",
                         "shared_fraction", "noise_std", "latent_dim", "subject_similarity", "coarse_grid", "n_rois",
                         "roi_fraction", "seed"});
  SynthSpec s;
  s.n_subjects = o.get("n_subjects", s.n_subjects);
  s.samples_per_subject = o.get("samples_per_subject", s.samples_per_subject);
  s.test_samples = o.get("test_samples", s.test_samples);
  if (o.has("image")) {
    StrictObject img(o.raw("image"), "image", {"channels", "height", "width"});
    s.image.channels = img.get("channels", s.image.channels);
    s.image.height = img.get("height", s.image.height);
    s.image.width = img.get("width", s.image.width);
  }
  auto vertices = [&](const char* key, std::size_t& scalar, std::vector<std::size_t>& list) {
    if (!o.has(key)) return;
    if (o.raw(key).is_array()) {
      for (const auto& v : o.raw(key)) {
        if (!v.is_number_unsigned()) throw ConfigError(std::string("'") + key + "' entries must be positive integers");
        list.push_back(v.get<std::size_t>());
      }
    } else {
      scalar = o.get(key, scalar);
    }
  };
  vertices("lh_vertices", s.lh_vertices, s.lh_vertices_per_subject);
  vertices("rh_vertices", s.rh_vertices, s.rh_vertices_per_subject);
  s.shared_fraction = o.get("shared_fraction", s.shared_fraction);
  s.noise_std = o.get("noise_std", s.noise_std);
  s.latent_dim = o.get("latent_dim", s.latent_dim);
  s.subject_similarity = o.get("subject_similarity", s.subject_similarity);
  s.coarse_grid = o.get("coarse_grid", s.coarse_grid);
  s.n_rois = o.get("n_rois", s.n_rois);
  s.roi_fraction = o.get("roi_fraction", s.roi_fraction);
  s.seed = o.get("seed", s.seed);
  s.validate();
  return s;
}

Synthetic generate(const SynthSpec& spec) {
  spec.validate();
  const auto& d = spec.image;
  const std::size_t pixels = d.pixels();
  const std::size_t n = spec.samples_per_subject + spec.test_samples;
  const std::size_t n_shared =
      std::min(spec.samples_per_subject, static_cast<std::size_t>(std::llround(spec.shared_fraction * static_cast<double>(spec.samples_per_subject))));

  Synthetic out;
  auto& ds = out.dataset;
  auto& truth = out.truth;
  truth.spec = spec;
  ds.manifest.image = d;
  ds.manifest.seed = spec.seed;

  // Shared images sit at the same leading record indices for every subject.
  nd::Tensor<float> shared({std::max<std::size_t>(n_shared, 1), d.channels, d.height, d.width});
  {
    auto rng = stream(spec.seed, kSharedImages);
    for (std::size_t i = 0; i < n_shared; ++i) smooth_image(shared.data().subspan(i * pixels, pixels), d, spec.coarse_grid, rng);
  }
  for (std::size_t s = 0; s < spec.n_subjects; ++s) {
    data::SubjectData sd;
    sd.spec.subject_index = s;
    sd.spec.lh_vertices = spec.vertices(s, Hemisphere::lh);
    sd.spec.rh_vertices = spec.vertices(s, Hemisphere::rh);
    sd.spec.n_samples = n;
    sd.spec.n_test = spec.test_samples;
    sd.images = nd::Tensor<float>({n, d.channels, d.height, d.width});
    auto rng = stream(spec.seed, kUniqueImages, static_cast<std::uint32_t>(s));
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = sd.images.data().subspan(i * pixels, pixels);
      if (i < n_shared)
        std::copy_n(shared.data().begin() + static_cast<std::ptrdiff_t>(i * pixels), pixels, dst.begin());
      else
        smooth_image(dst, d, spec.coarse_grid, rng);
    }
    ds.subjects.push_back(std::move(sd));
  }

  // Latent map: random projection standardized over every generated image.
  const std::size_t latent = spec.latent_dim;
  truth.projection = nd::Tensor<double>({latent, pixels});
  {
    auto rng = stream(spec.seed, kProjection);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(pixels)));
    for (auto& v : truth.projection.data()) v = normal(rng);
  }
  truth.latent_mean.assign(latent, 0.0);
  truth.latent_std.assign(latent, 1.0);
  std::vector<std::vector<std::vector<double>>> pre(spec.n_subjects);
  {
    std::vector<double> sum(latent, 0.0), sq(latent, 0.0);
    double count = 0.0;
    for (std::size_t s = 0; s < spec.n_subjects; ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        pre[s].push_back(project(truth, ds.subjects[s].images.data().subspan(i * pixels, pixels)));
        for (std::size_t k = 0; k < latent; ++k) sum[k] += pre[s].back()[k];
      }
      count += static_cast<double>(n);
    }
    for (std::size_t k = 0; k < latent; ++k) truth.latent_mean[k] = sum[k] / count;
    for (const auto& subject : pre)
      for (const auto& row : subject)
        for (std::size_t k = 0; k < latent; ++k) sq[k] += (row[k] - truth.latent_mean[k]) * (row[k] - truth.latent_mean[k]);
    for (std::size_t k = 0; k < latent; ++k) {
      const double sd = std::sqrt(sq[k] / count);
      truth.latent_std[k] = sd > 1e-12 ? sd : 1.0;
    }
  }
  auto phi_of = [&](const std::vector<double>& p) {
    std::vector<double> phi(latent);
    for (std::size_t k = 0; k < latent; ++k) phi[k] = std::tanh((p[k] - truth.latent_mean[k]) / truth.latent_std[k]);
    return phi;
  };

  // Shared mixing rows W0 blended with subject-specific D_s.
  const std::size_t max_lh = [&] {
    std::size_t m = 0;
    for (std::size_t s = 0; s < spec.n_subjects; ++s) m = std::max(m, spec.vertices(s, Hemisphere::lh));
    return m;
  }();
  const std::size_t max_rh = [&] {
    std::size_t m = 0;
    for (std::size_t s = 0; s < spec.n_subjects; ++s) m = std::max(m, spec.vertices(s, Hemisphere::rh));
    return m;
  }();
  nd::Tensor<double> w0_lh({max_lh, latent}), w0_rh({max_rh, latent});
  {
    auto rng = stream(spec.seed, kMixing);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : w0_lh.data()) v = normal(rng);
    for (auto& v : w0_rh.data()) v = normal(rng);
  }
  const double a = std::sqrt(spec.subject_similarity), b = std::sqrt(1.0 - spec.subject_similarity);

  for (std::size_t s = 0; s < spec.n_subjects; ++s) {
    auto& sd = ds.subjects[s];
    SubjectTruth st;
    std::vector<std::vector<double>> phis;
    for (const auto& p : pre[s]) phis.push_back(phi_of(p));
    auto mix_rng = stream(spec.seed, kSubjectMixing, static_cast<std::uint32_t>(s));
    auto bias_rng = stream(spec.seed, kBias, static_cast<std::uint32_t>(s));
    auto noise_rng = stream(spec.seed, kNoise, static_cast<std::uint32_t>(s));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
      const std::size_t v = spec.vertices(s, h);
      const auto& w0 = h == Hemisphere::lh ? w0_lh : w0_rh;
      auto& ht = st.hemisphere(h);
      ht.weight = nd::Tensor<double>({v, latent});
      for (std::size_t i = 0; i < v; ++i)
        for (std::size_t k = 0; k < latent; ++k) ht.weight[i * latent + k] = a * w0[i * latent + k] + b * normal(mix_rng);
      ht.bias.assign(v, 0.0);
      // Rescale each vertex to unit signal std around a random offset.
      std::vector<std::vector<double>> sig;
      for (const auto& phi : phis) sig.push_back(respond(ht, phi));
      for (std::size_t i = 0; i < v; ++i) {
        double mean = 0.0, sq = 0.0;
        for (const auto& row : sig) mean += row[i];
        mean /= static_cast<double>(n);
        for (const auto& row : sig) sq += (row[i] - mean) * (row[i] - mean);
        const double sdv = std::sqrt(sq / static_cast<double>(n));
        const double scale = sdv > 1e-12 ? 1.0 / sdv : 1.0;
        for (std::size_t k = 0; k < latent; ++k) ht.weight[i * latent + k] *= scale;
        ht.bias[i] = 0.5 * normal(bias_rng) - mean * scale;
      }
      ht.signal_std.assign(v, 0.0);
      ht.noise_std.assign(v, spec.noise_std);
      sig.clear();
      for (const auto& phi : phis) sig.push_back(respond(ht, phi));
      for (std::size_t i = 0; i < v; ++i) {
        double mean = 0.0, sq = 0.0;
        for (const auto& row : sig) mean += row[i];
        mean /= static_cast<double>(n);
        for (const auto& row : sig) sq += (row[i] - mean) * (row[i] - mean);
        ht.signal_std[i] = std::sqrt(sq / static_cast<double>(n));
      }
      auto& resp = h == Hemisphere::lh ? sd.lh : sd.rh;
      resp = nd::Tensor<float>({n, v});
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < v; ++i)
          resp[r * v + i] = static_cast<float>(sig[r][i] + ht.noise_std[i] * normal(noise_rng));
      auto& nc = h == Hemisphere::lh ? sd.spec.noise_ceiling_lh : sd.spec.noise_ceiling_rh;
      nc.resize(v);
      for (std::size_t i = 0; i < v; ++i) {
        const double s2 = ht.signal_std[i] * ht.signal_std[i], n2 = ht.noise_std[i] * ht.noise_std[i];
        nc[i] = static_cast<float>(s2 + n2 > 0.0 ? s2 / (s2 + n2) : 0.0);
      }
    }

    // ROIs: random vertex subsets, overlapping allowed.
    auto roi_rng = stream(spec.seed, kRois, static_cast<std::uint32_t>(s));
    for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
      const std::size_t v = spec.vertices(s, h);
      const std::size_t size = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.roi_fraction * static_cast<double>(v))));
      for (std::size_t r = 0; r < spec.n_rois; ++r) {
        std::vector<std::size_t> all(v);
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::shuffle(all.begin(), all.end(), roi_rng);
        all.resize(std::min(size, v));
        std::sort(all.begin(), all.end());
        std::string name = data::to_string(h) + "_" + kRoiNames[r % std::size(kRoiNames)];
        if (r >= std::size(kRoiNames)) name += "_" + std::to_string(r / std::size(kRoiNames));
        sd.spec.rois[name] = data::Roi{h, std::move(all)};
      }
    }
    ds.manifest.subjects.push_back(sd.spec);
    truth.subjects.push_back(std::move(st));
  }
  data::compute_channel_stats(ds);
  return out;
}

void save_synthetic(const Synthetic& synthetic, const fs::path& root) {
  data::save_dataset(synthetic.dataset, root);
  const auto& t = synthetic.truth;
  const fs::path dir = root / "ground_truth";
  fs::create_directories(dir);
  auto as_float = [](const std::vector<double>& v) {
    return nd::Tensor<float>({v.size()}, std::vector<float>(v.begin(), v.end()));
  };
  // JSON keeps the exact double values; the NENC files are float32 views.
  json subjects = json::array();
  for (std::size_t s = 0; s < t.subjects.size(); ++s) {
    json entry = json::object();
    for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
      const auto& ht = t.subjects[s].hemisphere(h);
      entry[data::to_string(h)] = {{"weight", ht.weight.storage()},
                                   {"bias", ht.bias},
                                   {"signal_std", ht.signal_std},
                                   {"noise_std", ht.noise_std}};
      char name[48];
      std::snprintf(name, sizeof name, "subj%02zu_%s_weight.nenc", s + 1, data::to_string(h).c_str());
      data::write_array(dir / name, t.subjects[s].hemisphere(h).weight.cast<float>());
      std::snprintf(name, sizeof name, "subj%02zu_%s_bias.nenc", s + 1, data::to_string(h).c_str());
      data::write_array(dir / name, as_float(ht.bias));
    }
    subjects.push_back(std::move(entry));
  }
  data::write_array(dir / "projection.nenc", t.projection.cast<float>());
  data::write_json(root / "ground_truth.json", {{"spec", to_json(t.spec)},
                                                {"projection", t.projection.storage()},
                                                {"latent_mean", t.latent_mean},
                                                {"latent_std", t.latent_std},
                                                {"subjects", subjects}});
}

GroundTruth load_ground_truth(const fs::path& root) {
  const json j = data::read_json(root / "ground_truth.json");
  GroundTruth t;
  try {
    t.spec = synth_spec_from_json(j.at("spec"));
    const std::size_t latent = t.spec.latent_dim, pixels = t.spec.image.pixels();
    t.projection = nd::Tensor<double>({latent, pixels}, j.at("projection").get<std::vector<double>>());
    t.latent_mean = j.at("latent_mean").get<std::vector<double>>();
    t.latent_std = j.at("latent_std").get<std::vector<double>>();
    if (t.latent_mean.size() != latent || t.latent_std.size() != latent)
      throw ValidationError("ground truth: latent statistics have the wrong length");
    for (std::size_t s = 0; s < j.at("subjects").size(); ++s) {
      const auto& entry = j.at("subjects")[s];
      SubjectTruth st;
      for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
        const auto& e = entry.at(data::to_string(h));
        auto& ht = st.hemisphere(h);
        ht.bias = e.at("bias").get<std::vector<double>>();
        ht.weight = nd::Tensor<double>({ht.bias.size(), latent}, e.at("weight").get<std::vector<double>>());
        ht.signal_std = e.at("signal_std").get<std::vector<double>>();
        ht.noise_std = e.at("noise_std").get<std::vector<double>>();
      }
      t.subjects.push_back(std::move(st));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("ground_truth.json: ") + e.what());
  } catch (const ShapeError& e) {
    throw ValidationError(std::string("ground_truth.json: ") + e.what());
  }
  return t;
}

nd::Tensor<double> latent_features(const GroundTruth& truth, const nd::Tensor<float>& images) {
  const std::size_t pixels = truth.projection.dim(1), latent = truth.projection.dim(0);
  if (images.rank() != 4 || images.size() != images.dim(0) * pixels)
    throw ValidationError("latent_features: images " + nd::shape_str(images.shape()) + " do not match ground truth with " +
                          std::to_string(pixels) + " pixels");
  const std::size_t n = images.dim(0);
  nd::Tensor<double> out({n, latent});
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = project(truth, images.data().subspan(i * pixels, pixels));
    for (std::size_t k = 0; k < latent; ++k) out[i * latent + k] = std::tanh((p[k] - truth.latent_mean[k]) / truth.latent_std[k]);
  }
  return out;
}

nd::Tensor<float> noiseless_responses(const GroundTruth& truth, const data::SubjectData& subject, Hemisphere h,
                                      std::span<const std::size_t> records) {
  const std::size_t s = subject.spec.subject_index;
  if (s >= truth.subjects.size()) throw ValidationError("ground truth has no subject " + std::to_string(s));
  const auto& ht = truth.subjects[s].hemisphere(h);
  const std::size_t v = subject.spec.vertices(h), latent = truth.projection.dim(0), pixels = truth.projection.dim(1);
  if (ht.bias.size() != v)
    throw ValidationError("ground truth for subject " + std::to_string(s) + " " + data::to_string(h) + " has " +
                          std::to_string(ht.bias.size()) + " vertices, dataset has " + std::to_string(v));
  if (subject.images.size() != subject.spec.n_samples * pixels)
    throw ValidationError("ground truth image size does not match subject " + std::to_string(s));
  nd::Tensor<float> out({records.size(), v});
  std::vector<double> phi(latent);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto p = project(truth, subject.images.data().subspan(records[r] * pixels, pixels));
    for (std::size_t k = 0; k < latent; ++k) phi[k] = std::tanh((p[k] - truth.latent_mean[k]) / truth.latent_std[k]);
    const auto y = respond(ht, phi);
    for (std::size_t i = 0; i < v; ++i) out[r * v + i] = static_cast<float>(y[i]);
  }
  return out;
}

PredictionSet oracle_predictions(const data::Dataset& dataset, const GroundTruth& truth, data::Split split,
                                 const data::FoldSpec& folds) {
  if (truth.subjects.size() != dataset.subjects.size())
    throw ValidationError("ground truth covers " + std::to_string(truth.subjects.size()) + " subjects, dataset has " +
                          std::to_string(dataset.subjects.size()));
  PredictionSet set;
  set.model_id = "oracle";
  set.split = split;
  set.folds = folds;
  for (std::size_t s = 0; s < dataset.subjects.size(); ++s) {
    SubjectPrediction sp;
    sp.subject = s;
    sp.records = dataset.split_indices(s, split, folds);
    sp.lh = noiseless_responses(truth, dataset.subjects[s], Hemisphere::lh, sp.records);
    sp.rh = noiseless_responses(truth, dataset.subjects[s], Hemisphere::rh, sp.records);
    set.subjects.push_back(std::move(sp));
  }
  return set;
}

eval::ScoreReport oracle_score(const data::Dataset& dataset, const GroundTruth& truth, data::Split split,
                               const data::FoldSpec& folds) {
  return eval::score_report(oracle_predictions(dataset, truth, split, folds), dataset);
}

nd::Tensor<double> sample_repeats(const GroundTruth& truth, std::size_t subject, Hemisphere h, std::span<const float> image,
                                  std::size_t repeats, std::uint64_t seed) {
  if (subject >= truth.subjects.size()) throw ArgumentError("ground truth has no subject " + std::to_string(subject));
  if (image.size() != truth.projection.dim(1)) throw ShapeError("sample_repeats: image size does not match ground truth");
  const auto& ht = truth.subjects[subject].hemisphere(h);
  const std::size_t latent = truth.projection.dim(0), v = ht.bias.size();
  const auto p = project(truth, image);
  std::vector<double> phi(latent);
  for (std::size_t k = 0; k < latent; ++k) phi[k] = std::tanh((p[k] - truth.latent_mean[k]) / truth.latent_std[k]);
  const auto clean = respond(ht, phi);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  nd::Tensor<double> out({repeats, v});
  for (std::size_t r = 0; r < repeats; ++r)
    for (std::size_t i = 0; i < v; ++i) out[r * v + i] = clean[i] + ht.noise_std[i] * normal(rng);
  return out;
}

}  // namespace brainenc::synth

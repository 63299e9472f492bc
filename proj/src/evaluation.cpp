#include "brainenc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace brainenc::eval {

using nlohmann::json;

template <typename T>
std::vector<double> pearson_per_vertex(const nd::Tensor<T>& pred, const nd::Tensor<T>& gt) {
  if (pred.rank() != 2 || pred.shape() != gt.shape())
    throw ShapeError("pearson_per_vertex: shapes " + nd::shape_str(pred.shape()) + " and " + nd::shape_str(gt.shape()) +
                     " must be equal rank-2 shapes");
  const std::size_t n = pred.dim(0), v = pred.dim(1);
  if (n < 2) throw ArgumentError("pearson_per_vertex: need at least 2 samples");
  std::vector<double> mp(v, 0.0), mg(v, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < v; ++j) {
      mp[j] += static_cast<double>(pred[i * v + j]);
      mg[j] += static_cast<double>(gt[i * v + j]);
    }
  for (std::size_t j = 0; j < v; ++j) {
    mp[j] /= static_cast<double>(n);
    mg[j] /= static_cast<double>(n);
  }
  std::vector<double> cov(v, 0.0), vp(v, 0.0), vg(v, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < v; ++j) {
      const double a = static_cast<double>(pred[i * v + j]) - mp[j];
      const double b = static_cast<double>(gt[i * v + j]) - mg[j];
      cov[j] += a * b;
      vp[j] += a * a;
      vg[j] += b * b;
    }
  std::vector<double> r(v, 0.0);
  const double floor = 1e-12 * static_cast<double>(n);
  for (std::size_t j = 0; j < v; ++j) {
    if (vp[j] < floor || vg[j] < floor) continue;
    r[j] = cov[j] / std::sqrt(vp[j] * vg[j]);
  }
  return r;
}

double metric_from_r(std::span<const double> r, std::span<const double> nc) {
  if (r.size() != nc.size())
    throw ShapeError("metric_m: " + std::to_string(r.size()) + " correlations but " + std::to_string(nc.size()) +
                     " noise-ceiling entries");
  if (r.empty()) throw ArgumentError("metric_m: no vertices");
  double acc = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!std::isfinite(nc[i]) || nc[i] < 0.0) throw ValidationError("metric_m: noise ceiling must be finite and non-negative");
    const double c = nc[i] == 0.0 ? 1.0 : nc[i];
    acc += r[i] * r[i] / c;
  }
  return acc / static_cast<double>(r.size());
}

template <typename T>
double metric_m(const nd::Tensor<T>& pred, const nd::Tensor<T>& gt, std::span<const double> nc) {
  const auto r = pearson_per_vertex(pred, gt);
  return metric_from_r(r, nc);
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

double SubjectScore::combined_m() const {
  const double total = static_cast<double>(lh.vertices + rh.vertices);
  return (lh.m * static_cast<double>(lh.vertices) + rh.m * static_cast<double>(rh.vertices)) / total;
}

const SubjectScore* ScoreReport::find(std::size_t subject) const {
  for (const auto& s : subjects)
    if (s.id == subject) return &s;
  return nullptr;
}

namespace {

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace

HemisphereScore score_hemisphere(const nd::Tensor<float>& pred, const nd::Tensor<float>& gt, const data::SubjectSpec& spec,
                                 data::Hemisphere h) {
  const auto r = pearson_per_vertex(pred, gt);
  const auto nc = to_double(spec.noise_ceiling(h));
  HemisphereScore score;
  score.vertices = r.size();
  score.m = metric_from_r(r, nc);
  score.median_r = median(r);
  for (const auto& [name, roi] : spec.rois) {
    if (roi.hemisphere != h) continue;
    std::vector<double> rr, nn;
    for (auto v : roi.indices) {
      rr.push_back(r.at(v));
      nn.push_back(nc.at(v));
    }
    score.rois[name] = metric_from_r(rr, nn);
  }
  return score;
}

ScoreReport score_report(const PredictionSet& predictions, const data::Dataset& dataset) {
  validate_predictions(predictions, dataset);
  ScoreReport report;
  double weighted = 0.0;
  std::size_t vertices = 0;
  for (const auto& sp : predictions.subjects) {
    const auto& subject = dataset.subjects[sp.subject];
    SubjectScore s;
    s.id = sp.subject;
    for (auto h : {data::Hemisphere::lh, data::Hemisphere::rh}) {
      const auto gt = data::gather_rows(subject.responses(h), sp.records);
      auto score = score_hemisphere(sp.hemisphere(h), gt, subject.spec, h);
      weighted += score.m * static_cast<double>(score.vertices);
      vertices += score.vertices;
      (h == data::Hemisphere::lh ? s.lh : s.rh) = std::move(score);
    }
    report.subjects.push_back(std::move(s));
  }
  report.overall_m = vertices ? weighted / static_cast<double>(vertices) : 0.0;
  report.meta = {{"model_id", predictions.model_id},
                 {"split", data::to_string(predictions.split)},
                 {"fold", predictions.folds.fold},
                 {"seed", predictions.folds.seed}};
  return report;
}

namespace {

json hemisphere_json(const HemisphereScore& h) {
  return {{"m", h.m}, {"median_r", h.median_r}, {"vertices", h.vertices}, {"rois", h.rois}};
}

HemisphereScore hemisphere_from_json(const json& j) {
  HemisphereScore h;
  h.m = j.at("m").get<double>();
  h.median_r = j.value("median_r", 0.0);
  h.vertices = j.value("vertices", std::size_t{0});
  h.rois = j.value("rois", std::map<std::string, double>{});
  return h;
}

}  // namespace

json report_to_json(const ScoreReport& report) {
  json subjects = json::array();
  for (const auto& s : report.subjects)
    subjects.push_back({{"id", s.id}, {"lh", hemisphere_json(s.lh)}, {"rh", hemisphere_json(s.rh)}});
  return {{"overall_m", report.overall_m}, {"subjects", subjects}, {"meta", report.meta}};
}

ScoreReport report_from_json(const json& j) {
  ScoreReport report;
  try {
    report.overall_m = j.at("overall_m").get<double>();
    for (const auto& s : j.at("subjects")) {
      SubjectScore score;
      score.id = s.at("id").get<std::size_t>();
      score.lh = hemisphere_from_json(s.at("lh"));
      score.rh = hemisphere_from_json(s.at("rh"));
      report.subjects.push_back(std::move(score));
    }
    report.meta = j.value("meta", json::object());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("score report: ") + e.what());
  }
  return report;
}

std::string report_table(const ScoreReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << std::left << std::setw(9) << "subject" << std::setw(6) << "hemi" << std::right << std::setw(10) << "m"
      << std::setw(10) << "median_r" << std::setw(10) << "vertices" << "\n";
  for (const auto& s : report.subjects) {
    for (auto h : {data::Hemisphere::lh, data::Hemisphere::rh}) {
      const auto& hs = h == data::Hemisphere::lh ? s.lh : s.rh;
      out << std::left << std::setw(9) << s.id << std::setw(6) << data::to_string(h) << std::right << std::setw(10)
          << hs.m << std::setw(10) << hs.median_r << std::setw(10) << hs.vertices << "\n";
      for (const auto& [name, m] : hs.rois)
        out << std::left << std::setw(9) << "" << std::setw(6) << "" << std::right << std::setw(10) << m << "  roi "
            << name << "\n";
    }
  }
  out << "overall m = " << report.overall_m << "\n";
  return out.str();
}

template std::vector<double> pearson_per_vertex(const nd::Tensor<float>&, const nd::Tensor<float>&);
template std::vector<double> pearson_per_vertex(const nd::Tensor<double>&, const nd::Tensor<double>&);
template double metric_m(const nd::Tensor<float>&, const nd::Tensor<float>&, std::span<const double>);
template double metric_m(const nd::Tensor<double>&, const nd::Tensor<double>&, std::span<const double>);

}  // namespace brainenc::eval

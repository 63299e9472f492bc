#include "brainenc/selftest.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>

#include "brainenc/encoder.hpp"
#include "brainenc/evaluation.hpp"
#include "brainenc/ndiff/grad_check.hpp"
#include "brainenc/nenc.hpp"
#include "brainenc/objectives.hpp"
#include "brainenc/synthgen.hpp"

namespace brainenc::selftest {

using nd::Tape;
using nd::Tensor;
using nd::Var;

namespace {

using Matrix = std::vector<std::vector<double>>;

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

SuiteResult start(std::string name, double tolerance) {
  SuiteResult r;
  r.name = std::move(name);
  r.tolerance = tolerance;
  return r;
}

// Records a measured error against the suite tolerance (or its own).
void record(SuiteResult& r, const std::string& what, double err, double tol = -1.0) {
  ++r.cases;
  const double limit = tol < 0.0 ? r.tolerance : tol;
  if (tol < 0.0) r.worst = std::max(r.worst, std::isnan(err) ? INFINITY : err);
  if (!(err < limit)) {
    r.passed = false;
    if (r.failures.size() < 20) {
      std::ostringstream msg;
      msg << what << ": error " << std::setprecision(3) << err << " >= " << limit;
      r.failures.push_back(msg.str());
    }
  }
}

void record_bool(SuiteResult& r, const std::string& what, bool ok) {
  ++r.cases;
  if (!ok) {
    r.passed = false;
    if (r.failures.size() < 20) r.failures.push_back(what);
  }
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(rows, std::vector<double>(cols));
  for (auto& row : m)
    for (auto& v : row) v = d(rng);
  return m;
}

Tensor<double> to_tensor(const Matrix& m) {
  Tensor<double> t({m.size(), m[0].size()});
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j) t.at(i, j) = m[i][j];
  return t;
}

Tensor<double> random_tensor(nd::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Two-pass Pearson pieces: means first, then centred sums.
struct Parts {
  double cov = 0, sx = 0, sy = 0;
};

Parts parts(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  Parts p;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p.cov += (x[i] - mx) * (y[i] - my);
    p.sx += (x[i] - mx) * (x[i] - mx);
    p.sy += (y[i] - my) * (y[i] - my);
  }
  return p;
}

std::vector<double> col(const Matrix& m, std::size_t c) {
  std::vector<double> out;
  for (const auto& row : m) out.push_back(row[c]);
  return out;
}

double oracle_pc(const Matrix& pred, const Matrix& gt) {
  double sum = 0;
  for (std::size_t r = 0; r < pred.size(); ++r) {
    const auto p = parts(pred[r], gt[r]);
    sum += p.cov / std::max(std::sqrt(p.sx) * std::sqrt(p.sy), 1e-6);
  }
  return 1.0 - (sum / static_cast<double>(pred.size()) + 1.0) / 2.0;
}

double oracle_mnnpc(const Matrix& pred, const Matrix& gt, const std::vector<double>& nc) {
  double sum = 0;
  const std::size_t cols = pred[0].size();
  for (std::size_t c = 0; c < cols; ++c) {
    const auto p = parts(col(gt, c), col(pred, c));
    const double r = p.cov / (std::sqrt(p.sx * p.sy) + 1e-8);
    double t = 1.0 - (r + 1.0) / 2.0;
    if (!nc.empty()) t = t * t / (nc[c] == 0.0 ? 1.0 : nc[c]);
    sum += t;
  }
  return sum / static_cast<double>(cols);
}

double oracle_metric(const Matrix& pred, const Matrix& gt, const std::vector<double>& nc) {
  double sum = 0;
  for (std::size_t c = 0; c < nc.size(); ++c) {
    const auto p = parts(col(pred, c), col(gt, c));
    const double r = p.cov / std::sqrt(p.sx * p.sy);
    sum += r * r / (nc[c] == 0.0 ? 1.0 : nc[c]);
  }
  return sum / static_cast<double>(nc.size());
}

double lib_pc(const Matrix& p, const Matrix& g) {
  Tape<double> t;
  return obj::pc_loss(t.constant(to_tensor(p)), t.constant(to_tensor(g))).value()[0];
}

double lib_mnnpc(const Matrix& p, const Matrix& g, const std::vector<double>& nc = {}) {
  Tape<double> t;
  return obj::mnnpc_loss(t.constant(to_tensor(p)), t.constant(to_tensor(g)), std::span<const double>(nc)).value()[0];
}

// Sum of y times fixed random weights so every output coordinate matters.
Var<double> contract(Var<double> y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  return nd::sum_all(nd::mul(y, y.tape->constant(random_tensor(y.shape(), rng))));
}

}  // namespace

SuiteResult loss_oracle_suite(std::size_t instances, std::uint64_t seed) {
  Timer timer;
  SuiteResult r = start("loss oracle", 1e-10);

  // Hand examples.
  record(r, "pc identical rows", std::abs(lib_pc({{1, 2, 3}}, {{1, 2, 3}})), 1e-12);
  record(r, "pc reversed rows", std::abs(lib_pc({{1, 2, 3}}, {{3, 2, 1}}) - 1.0), 1e-12);
  const double half_r = 1.0 / (2.0 * std::sqrt(7.0));
  record(r, "pc two-row example",
         std::abs(lib_pc({{1, 0, 2}, {0, 1, 1}}, {{2, 1, 3}, {1, 3, 0}}) - (1.0 - ((1.0 + half_r) / 2.0 + 1.0) / 2.0)), 1e-12);
  const Matrix g{{1, 4}, {3, 2}, {0, 7}};
  Matrix neg = g;
  for (auto& row : neg)
    for (auto& v : row) v = -v;
  record(r, "mnnpc identical", std::abs(lib_mnnpc(g, g)), 1e-8);
  record(r, "mnnpc negated", std::abs(lib_mnnpc(neg, g) - 1.0), 1e-8);
  const double t = 1.0 - (half_r + 1.0) / 2.0;
  record(r, "mnnpc with nc 0.5", std::abs(lib_mnnpc({{0}, {1}, {1}}, {{1}, {3}, {0}}, {0.5}) - t * t / 0.5), 1e-8);
  record(r, "mnnpc nc 0 counts as 1", std::abs(lib_mnnpc({{-1}, {-3}, {0}}, {{1}, {3}, {0}}, {0.0}) - 1.0), 1e-8);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> rows(2, 16), cols(2, 32);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t b = rows(rng), v = cols(rng);
    const auto p = random_matrix(b, v, rng), gt = random_matrix(b, v, rng);
    std::vector<double> nc(v);
    for (auto& c : nc) c = u(rng) < 0.1 ? 0.0 : u(rng);
    const std::string tag = "instance " + std::to_string(i);
    record(r, tag + " pc", std::abs(lib_pc(p, gt) - oracle_pc(p, gt)));
    record(r, tag + " mnnpc", std::abs(lib_mnnpc(p, gt) - oracle_mnnpc(p, gt, {})));
    record(r, tag + " mnnpc nc", std::abs(lib_mnnpc(p, gt, nc) - oracle_mnnpc(p, gt, nc)));
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteResult metric_suite(std::size_t instances, std::uint64_t seed) {
  Timer timer;
  SuiteResult r = start("metric", 1e-10);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> rows(3, 40), cols(1, 30);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t b = rows(rng), v = cols(rng);
    auto gt = random_matrix(b, v, rng), noise = random_matrix(b, v, rng);
    Matrix pred = gt;
    const double mix = u(rng);
    for (std::size_t a = 0; a < b; ++a)
      for (std::size_t c = 0; c < v; ++c) pred[a][c] = mix * gt[a][c] + (1.0 - mix) * noise[a][c];
    std::vector<double> nc(v);
    for (auto& c : nc) c = u(rng) < 0.1 ? 0.0 : 0.05 + u(rng);
    const double lib = eval::metric_m(to_tensor(pred), to_tensor(gt), std::span<const double>(nc));
    record(r, "instance " + std::to_string(i), std::abs(lib - oracle_metric(pred, gt, nc)));
  }

  synth::SynthSpec spec;
  spec.samples_per_subject = 96;
  spec.test_samples = 24;
  spec.image = {3, 8, 8};
  spec.lh_vertices = 30;
  spec.rh_vertices = 20;
  spec.noise_std = 0.0;
  spec.seed = seed;
  const auto syn = synth::generate(spec);
  for (auto split : {data::Split::val, data::Split::test}) {
    const double m = synth::oracle_score(syn.dataset, syn.truth, split, data::FoldSpec{5, 0, 0}).overall_m;
    record(r, "noiseless oracle on " + data::to_string(split), std::abs(m - 1.0), 1e-6);
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteResult op_gradient_suite(std::size_t seeds, std::uint64_t first_seed) {
  Timer timer;
  SuiteResult r = start("op gradients", 1e-6);
  using namespace nd;
  for (std::uint64_t seed = first_seed; seed < first_seed + seeds; ++seed) {
    std::mt19937_64 rng(seed);
    const auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng);
    const auto pos = random_tensor({3, 4}, rng, 0.5, 2.0);
    const auto img = random_tensor({2, 2, 5, 5}, rng), kernel = random_tensor({3, 2, 3, 3}, rng);
    const auto kbias = random_tensor({3}, rng), bias4 = random_tensor({4}, rng), src = random_tensor({3, 2}, rng);
    auto c = [](Tape<double>& t, const Tensor<double>& v) { return t.constant(v); };
    auto check = [&](const std::string& name, const ScalarFn& f, const Tensor<double>& at) {
      record(r, name + " (seed " + std::to_string(seed) + ")", grad_check(f, at));
    };
    const std::vector<std::size_t> rows{2, 0, 2}, cols{3, 1};
    const std::vector<double> scale{0.5, 2.0, -1.0, 3.0};

    check("matmul lhs", [&](Tape<double>& t, Var<double> x) { return contract(matmul(x, c(t, w)), seed); }, a);
    check("matmul rhs", [&](Tape<double>& t, Var<double> x) { return contract(matmul(c(t, a), x), seed); }, w);
    check("add", [&](Tape<double>& t, Var<double> x) { return contract(add(x, c(t, b)), seed); }, a);
    check("sub", [&](Tape<double>& t, Var<double> x) { return contract(sub(c(t, b), x), seed); }, a);
    check("mul", [&](Tape<double>& t, Var<double> x) { return contract(mul(x, c(t, b)), seed); }, a);
    check("div numerator", [&](Tape<double>& t, Var<double> x) { return contract(div(x, c(t, pos)), seed); }, a);
    check("div denominator", [&](Tape<double>& t, Var<double> x) { return contract(div(c(t, a), x), seed); }, pos);
    check("add_scalar", [&](Tape<double>&, Var<double> x) { return contract(add_scalar(x, 0.3), seed); }, a);
    check("mul_scalar", [&](Tape<double>&, Var<double> x) { return contract(mul_scalar(x, -1.7), seed); }, a);
    check("add_bias input", [&](Tape<double>& t, Var<double> x) { return contract(add_bias(x, c(t, bias4)), seed); }, a);
    check("add_bias bias", [&](Tape<double>& t, Var<double> x) { return contract(add_bias(c(t, a), x), seed); }, bias4);
    check("tanh", [&](Tape<double>&, Var<double> x) { return contract(nd::tanh(x), seed); }, a);
    check("square", [&](Tape<double>&, Var<double> x) { return contract(square(x), seed); }, a);
    check("sqrt", [&](Tape<double>&, Var<double> x) { return contract(nd::sqrt(x), seed); }, pos);
    check("sqrt_eps", [&](Tape<double>&, Var<double> x) { return contract(sqrt_eps(x), seed); }, pos);
    check("relu", [&](Tape<double>&, Var<double> x) { return contract(relu(x), seed); }, pos);
    check("clamp_min", [&](Tape<double>&, Var<double> x) { return contract(clamp_min(x, 0.1), seed); }, pos);
    check("mean_all", [&](Tape<double>&, Var<double> x) { return mean_all(square(x)); }, a);
    check("sum_axis 0", [&](Tape<double>&, Var<double> x) { return contract(sum_axis(x, 0), seed); }, a);
    check("sum_axis 1", [&](Tape<double>&, Var<double> x) { return contract(sum_axis(x, 1), seed); }, a);
    check("mean_axis 0", [&](Tape<double>&, Var<double> x) { return contract(mean_axis(x, 0), seed); }, a);
    check("center_axis 0", [&](Tape<double>&, Var<double> x) { return contract(center_axis(x, 0), seed); }, a);
    check("center_axis 1", [&](Tape<double>&, Var<double> x) { return contract(center_axis(x, 1), seed); }, a);
    check("concat_last", [&](Tape<double>& t, Var<double> x) { return contract(concat_last(x, c(t, b)), seed); }, a);
    check("gather_rows", [&](Tape<double>&, Var<double> x) { return contract(gather_rows(x, rows), seed); }, a);
    check("gather_cols", [&](Tape<double>&, Var<double> x) { return contract(gather_cols(x, cols), seed); }, a);
    check("scatter_add base",
          [&](Tape<double>& t, Var<double> x) { return contract(scatter_add_cols(x, c(t, src), cols), seed); }, a);
    check("scatter_add source",
          [&](Tape<double>& t, Var<double> x) { return contract(scatter_add_cols(c(t, a), x, cols), seed); }, src);
    check("scale_cols",
          [&](Tape<double>&, Var<double> x) { return contract(scale_cols(x, std::span<const double>(scale)), seed); }, a);
    check("reshape", [&](Tape<double>&, Var<double> x) { return contract(reshape(x, {4, 3}), seed); }, a);

    BatchNorm<double> bn("bn", 4);
    bn.gamma.value = random_tensor({4}, rng, 0.5, 2.0);
    check("batch_norm train", [&](Tape<double>&, Var<double> x) { return contract(batch_norm(x, bn, Mode::train), seed); }, a);
    BatchNorm<double> bn_infer("bn", 4);
    bn_infer.running_mean = random_tensor({4}, rng);
    bn_infer.running_var = random_tensor({4}, rng, 0.5, 2.0);
    check("batch_norm infer",
          [&](Tape<double>&, Var<double> x) { return contract(batch_norm(x, bn_infer, Mode::infer), seed); }, a);
    auto bn_param = [&](Tape<double>& t) { return contract(batch_norm(t.constant(a), bn, Mode::train), seed); };
    record(r, "batch_norm gamma (seed " + std::to_string(seed) + ")", grad_check_parameter(bn_param, bn.gamma));
    record(r, "batch_norm beta (seed " + std::to_string(seed) + ")", grad_check_parameter(bn_param, bn.beta));

    check("conv2d input",
          [&](Tape<double>& t, Var<double> x) { return contract(conv2d(x, c(t, kernel), c(t, kbias), 2, 1), seed); }, img);
    check("conv2d weight",
          [&](Tape<double>& t, Var<double> x) { return contract(conv2d(c(t, img), x, c(t, kbias), 2, 1), seed); }, kernel);
    check("conv2d bias",
          [&](Tape<double>& t, Var<double> x) { return contract(conv2d(c(t, img), c(t, kernel), x, 2, 1), seed); }, kbias);
    BatchNorm<double> bn_spatial("bn", 2);
    bn_spatial.gamma.value = random_tensor({2}, rng, 0.5, 2.0);
    check("batch_norm_spatial",
          [&](Tape<double>&, Var<double> x) { return contract(batch_norm_spatial(x, bn_spatial, Mode::train), seed); }, img);
    check("global_avg_pool", [&](Tape<double>&, Var<double> x) { return contract(global_avg_pool(x), seed); }, img);

    const auto gt = random_tensor({5, 6}, rng);
    std::vector<double> nc(6);
    for (auto& v : nc) v = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
    // Residuals kept clear of the |d| = beta seam, where the second derivative jumps.
    auto near_gt = gt;
    for (auto& v : near_gt.data()) {
      const double mag = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5
                             ? std::uniform_real_distribution<double>(0.05, 0.4)(rng)
                             : std::uniform_real_distribution<double>(0.6, 1.5)(rng);
      v += std::bernoulli_distribution(0.5)(rng) ? mag : -mag;
    }
    check("smooth_l1", [&](Tape<double>& t, Var<double> x) { return obj::smooth_l1(x, c(t, gt), 0.5); }, near_gt);
    check("pc_loss", [&](Tape<double>& t, Var<double> x) { return obj::pc_loss(x, c(t, gt)); }, random_tensor({5, 6}, rng));
    check("mnnpc_loss", [&](Tape<double>& t, Var<double> x) { return obj::mnnpc_loss(x, c(t, gt)); },
          random_tensor({5, 6}, rng));
    check("mnnpc_loss with nc",
          [&](Tape<double>& t, Var<double> x) { return obj::mnnpc_loss(x, c(t, gt), std::span<const double>(nc)); },
          random_tensor({5, 6}, rng));
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteResult encoder_gradient_suite(std::size_t seeds, std::uint64_t first_seed) {
  Timer timer;
  SuiteResult r = start("encoder gradients", 1e-4);
  using data::Hemisphere;
  for (std::uint64_t seed = first_seed; seed < first_seed + seeds; ++seed) {
    for (auto kind : {model::ExtractorKind::mlp, model::ExtractorKind::conv}) {
      model::EncoderConfig cfg;
      cfg.extractor.kind = kind;
      cfg.extractor.widths = kind == model::ExtractorKind::mlp ? std::vector<std::size_t>{6} : std::vector<std::size_t>{3, 4};
      cfg.extractor.activation = model::Activation::tanh;
      cfg.extractor.feature_dim = 5;
      cfg.image = data::ImageDims{2, 6, 6};
      cfg.n_subjects = 3;
      cfg.embedding_dim = 4;
      cfg.lh_outputs = 7;
      cfg.rh_outputs = 5;
      model::Encoder<double> enc(cfg, seed);
      data::RoiTable rois;
      rois["lh_A"] = data::Roi{Hemisphere::lh, {0, 2, 5}};
      rois["rh_B"] = data::Roi{Hemisphere::rh, {1, 2}};
      enc.add_roi_heads(rois);
      std::mt19937_64 rng(seed * 7919 + 1);
      std::normal_distribution<double> jitter(0.0, 0.1);
      for (auto* p : enc.parameters())
        for (auto& v : p->value.data()) v += jitter(rng);
      const auto img = random_tensor({4, 2, 6, 6}, rng, 0.0, 1.0);
      const auto gt_l = random_tensor({4, 7}, rng), gt_r = random_tensor({4, 5}, rng);
      std::vector<double> nc_l(7), nc_r(5);
      for (auto* nc : {&nc_l, &nc_r})
        for (auto& v : *nc) v = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
      nc_l[2] = 0.0;
      const std::vector<std::uint8_t> mask_l{1, 1, 1, 1, 1, 1, 0};
      const std::vector<std::size_t> subjects{0, 1, 2, 1};
      auto loss = [&](Tape<double>& tape) {
        auto out = enc.forward(tape, img, subjects, nd::Mode::train);
        return obj::composite_loss(enc.aggregate(out, Hemisphere::lh), enc.aggregate(out, Hemisphere::rh),
                                   tape.constant(gt_l), tape.constant(gt_r), obj::LossSpec{},
                                   std::span<const double>(nc_l), std::span<const double>(nc_r),
                                   std::span<const std::uint8_t>(mask_l));
      };
      const std::string tag = std::string(kind == model::ExtractorKind::mlp ? "mlp" : "conv") + " seed " +
                              std::to_string(seed) + " ";
      for (auto* p : enc.parameters()) {
        const bool before_norm = (p->name.starts_with("extractor.conv") && p->name.ends_with(".bias")) ||
                                 p->name == "extractor.out.bias";
        if (before_norm) {
          // Batch norm cancels a per-column shift, so the exact gradient is zero.
          p->zero_grad();
          Tape<double> tape;
          tape.backward(loss(tape));
          double g = 0.0;
          for (double v : p->grad.data()) g = std::max(g, std::abs(v));
          record(r, tag + p->name + " (zero gradient)", g, 1e-10);
          continue;
        }
        record(r, tag + p->name, nd::grad_check_parameter(loss, *p, 1e-5));
      }
    }
  }
  r.seconds = timer.seconds();
  return r;
}

SuiteResult nenc_suite(std::size_t shapes, std::uint64_t seed) {
  Timer timer;
  SuiteResult r = start("nenc format", 0.5);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> rank_d(1, 4), dim_d(1, 9);
  std::uniform_int_distribution<std::uint32_t> bits_d;
  for (std::size_t i = 0; i < shapes; ++i) {
    nd::Shape shape(rank_d(rng));
    for (auto& d : shape) d = dim_d(rng);
    Tensor<float> t(shape);
    // Arbitrary bit patterns, NaN payloads and infinities included.
    for (auto& v : t.data()) v = std::bit_cast<float>(bits_d(rng));
    std::stringstream buf;
    data::write_array(buf, t);
    const std::string bytes = buf.str();
    const bool size_ok = bytes.size() == data::nenc_header_bytes(shape.size()) + 4 * t.size();
    std::istringstream in(bytes);
    const auto back = data::read_array(in, "roundtrip");
    const bool same = back.shape() == shape &&
                      std::memcmp(back.data().data(), t.data().data(), t.size() * sizeof(float)) == 0;
    record_bool(r, "shape " + nd::shape_str(shape) + " round trip", size_ok && same);
  }

  Tensor<float> base({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  std::stringstream buf;
  data::write_array(buf, base);
  const std::string good = buf.str();
  auto rejected = [](const std::string& bytes) {
    std::istringstream in(bytes);
    try {
      data::read_array(in, "corrupt");
    } catch (const CorruptContainerError&) {
      return true;
    }
    return false;
  };
  auto patched = [&](std::size_t offset, std::uint64_t value, std::size_t width) {
    std::string b = good;
    for (std::size_t k = 0; k < width; ++k) b[offset + k] = static_cast<char>((value >> (8 * k)) & 0xFF);
    return b;
  };
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  record_bool(r, "bad magic rejected", rejected(bad_magic));
  record_bool(r, "unknown version rejected", rejected(patched(4, 2, 4)));
  record_bool(r, "unknown dtype rejected", rejected(patched(8, 7, 4)));
  record_bool(r, "rank 0 rejected", rejected(patched(12, 0, 4)));
  record_bool(r, "rank 9 rejected", rejected(patched(12, 9, 4)));
  record_bool(r, "zero dimension rejected", rejected(patched(16, 0, 8)));
  record_bool(r, "overflowing dimension rejected", rejected(patched(16, ~std::uint64_t{0}, 8)));
  record_bool(r, "truncated header rejected", rejected(good.substr(0, 10)));
  record_bool(r, "truncated payload rejected", rejected(good.substr(0, good.size() - 1)));
  record_bool(r, "empty input rejected", rejected(""));
  r.seconds = timer.seconds();
  return r;
}

std::vector<SuiteResult> run_all(std::uint64_t seed) {
  return {loss_oracle_suite(1000, seed), metric_suite(200, seed + 1), op_gradient_suite(20, seed),
          encoder_gradient_suite(20, seed), nenc_suite(100, seed + 2)};
}

std::string format(const SuiteResult& r) {
  std::ostringstream out;
  out << (r.passed ? "ok   " : "FAIL ") << std::left << std::setw(18) << r.name << std::right << std::setw(6) << r.cases
      << " checks";
  if (r.tolerance < 0.5) out << "  worst " << std::scientific << std::setprecision(2) << r.worst << " (tol " << r.tolerance << ")";
  out << std::fixed << std::setprecision(2) << "  " << r.seconds << " s";
  for (const auto& f : r.failures) out << "\n     " << f;
  return out.str();
}

}  // namespace brainenc::selftest

#pragma once

// Scalar reference implementations used only by tests. They deliberately
// avoid the tape and the library's reductions.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(rows, std::vector<double>(cols));
  for (auto& row : m)
    for (auto& v : row) v = dist(rng);
  return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

struct PearsonParts {
  double cov = 0.0;
  double ss_x = 0.0;
  double ss_y = 0.0;
};

// Two-pass: means first, then centred sums.
inline PearsonParts pearson_parts(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  PearsonParts p;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p.cov += (x[i] - mx) * (y[i] - my);
    p.ss_x += (x[i] - mx) * (x[i] - mx);
    p.ss_y += (y[i] - my) * (y[i] - my);
  }
  return p;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const auto p = pearson_parts(x, y);
  return p.cov / std::sqrt(p.ss_x * p.ss_y);
}

inline std::vector<double> column(const Matrix& m, std::size_t c) {
  std::vector<double> out;
  for (const auto& row : m) out.push_back(row[c]);
  return out;
}

// Row-wise correlation loss with the cosine-similarity epsilon on the norm product.
inline double pc_loss(const Matrix& pred, const Matrix& gt) {
  double sum = 0.0;
  for (std::size_t r = 0; r < pred.size(); ++r) {
    const auto p = pearson_parts(pred[r], gt[r]);
    sum += p.cov / std::max(std::sqrt(p.ss_x) * std::sqrt(p.ss_y), 1e-6);
  }
  const double mean = sum / static_cast<double>(pred.size());
  return 1.0 - (mean + 1.0) / 2.0;
}

// Column-wise correlation loss, epsilon added to the denominator, optional nc.
inline double mnnpc_loss(const Matrix& pred, const Matrix& gt, const std::vector<double>* nc = nullptr) {
  const std::size_t cols = pred[0].size();
  double sum = 0.0;
  for (std::size_t c = 0; c < cols; ++c) {
    const auto p = pearson_parts(column(gt, c), column(pred, c));
    const double r = p.cov / (std::sqrt(p.ss_x * p.ss_y) + 1e-8);
    double t = 1.0 - (r + 1.0) / 2.0;
    if (nc) {
      const double n = (*nc)[c] == 0.0 ? 1.0 : (*nc)[c];
      t = t * t / n;
    }
    sum += t;
  }
  return sum / static_cast<double>(cols);
}

// Noise-normalized accuracy with explicit loops.
inline double metric_m(const Matrix& pred, const Matrix& gt, const std::vector<double>& nc) {
  double sum = 0.0;
  for (std::size_t c = 0; c < nc.size(); ++c) {
    const double r = pearson(column(pred, c), column(gt, c));
    sum += r * r / (nc[c] == 0.0 ? 1.0 : nc[c]);
  }
  return sum / static_cast<double>(nc.size());
}

}  // namespace oracle

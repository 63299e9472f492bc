#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "brainenc/ndiff/tensor.hpp"
#include "oracles.hpp"

namespace testutil {

template <typename T = double>
brainenc::nd::Tensor<T> to_tensor(const oracle::Matrix& m) {
  brainenc::nd::Tensor<T> t({m.size(), m[0].size()});
  for (std::size_t r = 0; r < m.size(); ++r)
    for (std::size_t c = 0; c < m[0].size(); ++c) t.at(r, c) = static_cast<T>(m[r][c]);
  return t;
}

template <typename T = double>
brainenc::nd::Tensor<T> random_tensor(brainenc::nd::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  brainenc::nd::Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

/// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("brainenc_test_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil

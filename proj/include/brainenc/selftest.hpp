#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace brainenc::selftest {

/// Outcome of one suite. `worst` is the largest observed error measure,
/// compared against `tolerance`.
struct SuiteResult {
  std::string name;
  bool passed = true;
  std::size_t cases = 0;
  double worst = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  std::vector<std::string> failures;
};

/// Correlation losses against a scalar two-pass Pearson oracle on random
/// instances (up to 16 x 32), plus the hand-computed examples.
SuiteResult loss_oracle_suite(std::size_t instances, std::uint64_t seed);

/// metric_m against a brute-force loop implementation, and the noiseless
/// synthetic oracle scoring exactly 1 within 1e-6.
SuiteResult metric_suite(std::size_t instances, std::uint64_t seed);

/// Finite-difference check of every differentiable op, one pass per seed.
SuiteResult op_gradient_suite(std::size_t seeds, std::uint64_t first_seed);

/// Finite-difference check of a tiny encoder (mlp and conv) with ROI heads
/// under the composite loss, every parameter, one pass per seed.
SuiteResult encoder_gradient_suite(std::size_t seeds, std::uint64_t first_seed);

/// NENC round trips on random shapes compared bitwise, and rejection of
/// corrupted headers and truncated payloads.
SuiteResult nenc_suite(std::size_t shapes, std::uint64_t seed);

/// All suites at their default sizes.
std::vector<SuiteResult> run_all(std::uint64_t seed = 0);

/// One line per suite.
std::string format(const SuiteResult& r);

}  // namespace brainenc::selftest

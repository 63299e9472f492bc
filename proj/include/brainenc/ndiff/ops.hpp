#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "brainenc/ndiff/tape.hpp"

namespace brainenc::nd {

enum class Mode { train, infer };

/// Learned affine parameters plus running statistics of one batch-norm layer.
template <typename T>
struct BatchNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm() = default;
  BatchNorm(const std::string& prefix, std::size_t features)
      : gamma(prefix + ".gamma", Tensor<T>({features}, T{1})),
        beta(prefix + ".beta", Tensor<T>({features}, T{0})),
        running_mean({features}, T{0}),
        running_var({features}, T{1}) {}

  std::size_t features() const { return gamma.value.size(); }
};

// Linear algebra
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);

// Elementwise on identical shapes
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);

// Tensor-vs-scalar
template <typename T> Var<T> add_scalar(Var<T> a, T s);
template <typename T> Var<T> mul_scalar(Var<T> a, T s);

/// x[B×N] + bias[N] broadcast over rows.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);

// Pointwise
template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> tanh(Var<T> x);
template <typename T> Var<T> square(Var<T> x);
/// sqrt with a zero subgradient at 0 so constant columns do not yield NaN.
template <typename T> Var<T> sqrt(Var<T> x);
/// sqrt(x + 1e-8)
template <typename T> Var<T> sqrt_eps(Var<T> x);
template <typename T> Var<T> clamp_min(Var<T> x, T lo);

// Reductions. Axis variants take rank-2 input and keep the reduced axis as 1.
template <typename T> Var<T> sum_all(Var<T> x);
template <typename T> Var<T> mean_all(Var<T> x);
template <typename T> Var<T> sum_axis(Var<T> x, std::size_t axis);
template <typename T> Var<T> mean_axis(Var<T> x, std::size_t axis);
/// x minus its mean along `axis` (rank 2).
template <typename T> Var<T> center_axis(Var<T> x, std::size_t axis);

// Structural
template <typename T> Var<T> concat_last(Var<T> a, Var<T> b);
template <typename T> Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows);
template <typename T> Var<T> gather_cols(Var<T> x, std::span<const std::size_t> cols);
/// base[B×L] with src[B×k] added into columns `cols` (length k).
template <typename T> Var<T> scatter_add_cols(Var<T> base, Var<T> src, std::span<const std::size_t> cols);
/// Multiplies column j by the constant scale[j].
template <typename T> Var<T> scale_cols(Var<T> x, std::span<const T> scale);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);

// Layers
/// Per-column normalization of x[B×D]. Train mode updates running statistics.
template <typename T> Var<T> batch_norm(Var<T> x, BatchNorm<T>& bn, Mode mode);
/// Per-channel normalization of x[B×C×H×W] over (B, H, W).
template <typename T> Var<T> batch_norm_spatial(Var<T> x, BatchNorm<T>& bn, Mode mode);
/// x[B×C×H×W] * w[O×C×K×K] + bias[O], square kernel, zero padding.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride, std::size_t padding);
/// x[B×C×H×W] -> B×C
template <typename T> Var<T> global_avg_pool(Var<T> x);

}  // namespace brainenc::nd

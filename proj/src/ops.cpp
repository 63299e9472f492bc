#include "brainenc/ndiff/ops.hpp"

#include <cmath>

namespace brainenc::nd {

namespace {

template <typename T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank(const char* op, Var<T> x, std::size_t rank) {
  if (x.shape().size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

// Accumulates g * factor(i) into the gradient of `target`.
template <typename T, typename F>
void accumulate(Tape<T>& tape, Var<T> target, std::span<const T> g, F factor) {
  if (!tape.needs_grad(target.id)) return;
  auto dst = tape.grad_mut(target.id).data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * factor(i);
}

template <typename T, typename F>
Var<T> unary(Var<T> x, F forward, std::function<T(std::size_t, T, T)> derivative) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward(xv[i]);
  return x.tape->record(std::move(out), {x}, [x, derivative](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto& xv = tape.value(x.id);
    const auto& yv = tape.value(self);
    accumulate<T>(tape, x, g.data(), [&](std::size_t i) { return derivative(i, xv[i], yv[i]); });
  });
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* row = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      const T* brow = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    if (tape.needs_grad(a.id)) {
      // dA = G B^T
      const auto& bv = tape.value(b.id);
      auto& ga = tape.grad_mut(a.id);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (tape.needs_grad(b.id)) {
      // dB = A^T G
      const auto& av = tape.value(a.id);
      auto& gb = tape.grad_mut(b.id);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad(self).data();
    accumulate<T>(tape, a, g, [](std::size_t) { return T{1}; });
    accumulate<T>(tape, b, g, [](std::size_t) { return T{1}; });
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape("sub", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad(self).data();
    accumulate<T>(tape, a, g, [](std::size_t) { return T{1}; });
    accumulate<T>(tape, b, g, [](std::size_t) { return T{-1}; });
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad(self).data();
    const auto& av = tape.value(a.id);
    const auto& bv = tape.value(b.id);
    accumulate<T>(tape, a, g, [&](std::size_t i) { return bv[i]; });
    accumulate<T>(tape, b, g, [&](std::size_t i) { return av[i]; });
  });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  require_same_shape("div", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad(self).data();
    const auto& av = tape.value(a.id);
    const auto& bv = tape.value(b.id);
    accumulate<T>(tape, a, g, [&](std::size_t i) { return T{1} / bv[i]; });
    accumulate<T>(tape, b, g, [&](std::size_t i) { return -av[i] / (bv[i] * bv[i]); });
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  return unary<T>(a, [s](T v) { return v + s; }, [](std::size_t, T, T) { return T{1}; });
}

template <typename T>
Var<T> mul_scalar(Var<T> a, T s) {
  return unary<T>(a, [s](T v) { return v * s; }, [s](std::size_t, T, T) { return s; });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  require_rank("add_bias", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.value().size() != cols)
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + bv[c];
  return x.tape->record(std::move(out), {x, bias}, [x, bias, rows, cols](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad(self).data();
    accumulate<T>(tape, x, g, [](std::size_t) { return T{1}; });
    if (tape.needs_grad(bias.id)) {
      auto& gb = tape.grad_mut(bias.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    }
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary<T>(
      x, [](T v) { return v > T{0} ? v : T{0}; }, [](std::size_t, T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  return unary<T>(x, [](T v) { return std::tanh(v); }, [](std::size_t, T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> square(Var<T> x) {
  return unary<T>(x, [](T v) { return v * v; }, [](std::size_t, T v, T) { return T{2} * v; });
}

template <typename T>
Var<T> sqrt(Var<T> x) {
  return unary<T>(
      x, [](T v) { return std::sqrt(v); }, [](std::size_t, T, T y) { return y > T{0} ? T{0.5} / y : T{0}; });
}

template <typename T>
Var<T> sqrt_eps(Var<T> x) {
  return unary<T>(x, [](T v) { return std::sqrt(v + T(1e-8)); }, [](std::size_t, T, T y) { return T{0.5} / y; });
}

template <typename T>
Var<T> clamp_min(Var<T> x, T lo) {
  return unary<T>(
      x, [lo](T v) { return v > lo ? v : lo; }, [lo](std::size_t, T v, T) { return v > lo ? T{1} : T{0}; });
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return x.tape->record(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& tape, std::size_t self) {
    const T g = tape.grad(self)[0];
    auto& gx = tape.grad_mut(x.id);
    for (auto& v : gx.data()) v += g;
  });
}

template <typename T>
Var<T> mean_all(Var<T> x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return x.tape->record(Tensor<T>::scalar(acc / static_cast<T>(n)), {x}, [x, n](Tape<T>& tape, std::size_t self) {
    const T g = tape.grad(self)[0] / static_cast<T>(n);
    auto& gx = tape.grad_mut(x.id);
    for (auto& v : gx.data()) v += g;
  });
}

namespace {

template <typename T>
Var<T> reduce_axis(Var<T> x, std::size_t axis, bool mean) {
  require_rank(mean ? "mean_axis" : "sum_axis", x, 2);
  if (axis > 1) throw ArgumentError("axis must be 0 or 1");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const auto& xv = x.value();
  Tensor<T> out(axis == 0 ? Shape{1, cols} : Shape{rows, 1});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[axis == 0 ? c : r] += xv[r * cols + c];
  const T scale = mean ? T{1} / static_cast<T>(axis == 0 ? rows : cols) : T{1};
  if (mean)
    for (auto& v : out.data()) v *= scale;
  return x.tape->record(std::move(out), {x}, [x, axis, rows, cols, scale](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& gx = tape.grad_mut(x.id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[axis == 0 ? c : r] * scale;
  });
}

}  // namespace

template <typename T>
Var<T> sum_axis(Var<T> x, std::size_t axis) {
  return reduce_axis(x, axis, false);
}

template <typename T>
Var<T> mean_axis(Var<T> x, std::size_t axis) {
  return reduce_axis(x, axis, true);
}

template <typename T>
Var<T> center_axis(Var<T> x, std::size_t axis) {
  require_rank("center_axis", x, 2);
  if (axis > 1) throw ArgumentError("axis must be 0 or 1");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const std::size_t n = axis == 0 ? rows : cols;
  const auto& xv = x.value();
  std::vector<T> means(axis == 0 ? cols : rows, T{0});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) means[axis == 0 ? c : r] += xv[r * cols + c];
  for (auto& m : means) m /= static_cast<T>(n);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] - means[axis == 0 ? c : r];
  return x.tape->record(std::move(out), {x}, [x, axis, rows, cols, n](Tape<T>& tape, std::size_t self) {
    // d/dx (x - mean(x)) applied to g is g - mean(g) along the same axis.
    const auto& g = tape.grad(self);
    std::vector<T> gmeans(axis == 0 ? cols : rows, T{0});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gmeans[axis == 0 ? c : r] += g[r * cols + c];
    for (auto& m : gmeans) m /= static_cast<T>(n);
    auto& gx = tape.grad_mut(x.id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] - gmeans[axis == 0 ? c : r];
  });
}

template <typename T>
Var<T> concat_last(Var<T> a, Var<T> b) {
  require_rank("concat_last", a, 2);
  require_rank("concat_last", b, 2);
  if (a.dim(0) != b.dim(0))
    throw ShapeError("concat_last: batch mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1), cols = ca + cb;
  Tensor<T> out({rows, cols});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) out[r * cols + c] = av[r * ca + c];
    for (std::size_t c = 0; c < cb; ++c) out[r * cols + ca + c] = bv[r * cb + c];
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, rows, ca, cb, cols](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    if (tape.needs_grad(a.id)) {
      auto& ga = tape.grad_mut(a.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * cols + c];
    }
    if (tape.needs_grad(b.id)) {
      auto& gb = tape.grad_mut(b.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * cols + ca + c];
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows) {
  require_rank("gather_rows", x, 2);
  const std::size_t n = x.dim(0), cols = x.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (auto r : idx)
    if (r >= n) throw ArgumentError("gather_rows: row " + std::to_string(r) + " out of range " + std::to_string(n));
  Tensor<T> out({idx.size(), cols});
  const auto& xv = x.value();
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t c = 0; c < cols; ++c) out[i * cols + c] = xv[idx[i] * cols + c];
  return x.tape->record(std::move(out), {x}, [x, idx, cols](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& gx = tape.grad_mut(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) gx[idx[i] * cols + c] += g[i * cols + c];
  });
}

template <typename T>
Var<T> gather_cols(Var<T> x, std::span<const std::size_t> cols) {
  require_rank("gather_cols", x, 2);
  const std::size_t rows = x.dim(0), n = x.dim(1);
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  for (auto c : idx)
    if (c >= n) throw ArgumentError("gather_cols: column " + std::to_string(c) + " out of range " + std::to_string(n));
  const std::size_t k = idx.size();
  Tensor<T> out({rows, k});
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = xv[r * n + idx[j]];
  return x.tape->record(std::move(out), {x}, [x, idx, rows, n, k](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& gx = tape.grad_mut(x.id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < k; ++j) gx[r * n + idx[j]] += g[r * k + j];
  });
}

template <typename T>
Var<T> scatter_add_cols(Var<T> base, Var<T> src, std::span<const std::size_t> cols) {
  require_rank("scatter_add_cols", base, 2);
  require_rank("scatter_add_cols", src, 2);
  const std::size_t rows = base.dim(0), n = base.dim(1), k = src.dim(1);
  if (src.dim(0) != rows || cols.size() != k)
    throw ShapeError("scatter_add_cols: source " + shape_str(src.shape()) + " incompatible with base " +
                     shape_str(base.shape()) + " and " + std::to_string(cols.size()) + " indices");
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  for (auto c : idx)
    if (c >= n) throw ArgumentError("scatter_add_cols: column " + std::to_string(c) + " out of range");
  Tensor<T> out = base.value();
  const auto& sv = src.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * n + idx[j]] += sv[r * k + j];
  return base.tape->record(std::move(out), {base, src}, [base, src, idx, rows, n, k](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    accumulate<T>(tape, base, g.data(), [](std::size_t) { return T{1}; });
    if (tape.needs_grad(src.id)) {
      auto& gs = tape.grad_mut(src.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < k; ++j) gs[r * k + j] += g[r * n + idx[j]];
    }
  });
}

template <typename T>
Var<T> scale_cols(Var<T> x, std::span<const T> scale) {
  require_rank("scale_cols", x, 2);
  const std::size_t cols = x.dim(1);
  if (scale.size() != cols) throw ShapeError("scale_cols: scale length does not match " + shape_str(x.shape()));
  std::vector<T> s(scale.begin(), scale.end());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s[i % cols];
  return x.tape->record(std::move(out), {x}, [x, s, cols](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad(self).data();
    accumulate<T>(tape, x, g, [&](std::size_t i) { return s[i % cols]; });
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad(self).data();
    accumulate<T>(tape, x, g, [](std::size_t) { return T{1}; });
  });
}

namespace {

// Shared batch-norm kernel. `groups` is the count of elements per channel
// slice, laid out as [outer][channel][inner].
template <typename T>
Var<T> batch_norm_impl(Var<T> x, BatchNorm<T>& bn, Mode mode, std::size_t outer, std::size_t channels,
                       std::size_t inner) {
  if (bn.features() != channels)
    throw ShapeError("batch_norm: layer has " + std::to_string(bn.features()) + " features, input " +
                     shape_str(x.shape()));
  const std::size_t count = outer * inner;
  const auto& xv = x.value();
  std::vector<T> mean(channels, T{0}), var(channels, T{0});
  auto index = [channels, inner](std::size_t o, std::size_t c, std::size_t i) { return (o * channels + c) * inner + i; };

  if (mode == Mode::train) {
    if (count < 2) throw ArgumentError("batch_norm: train mode needs at least 2 values per feature, got batch of 1");
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < inner; ++i) mean[c] += xv[index(o, c, i)];
    for (auto& m : mean) m /= static_cast<T>(count);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < inner; ++i) {
          const T d = xv[index(o, c, i)] - mean[c];
          var[c] += d * d;
        }
    for (auto& v : var) v /= static_cast<T>(count);
    const T unbias = static_cast<T>(count) / static_cast<T>(count - 1);
    for (std::size_t c = 0; c < channels; ++c) {
      bn.running_mean[c] = (T{1} - bn.momentum) * bn.running_mean[c] + bn.momentum * mean[c];
      bn.running_var[c] = (T{1} - bn.momentum) * bn.running_var[c] + bn.momentum * var[c] * unbias;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = bn.running_mean[c];
      var[c] = bn.running_var[c];
    }
  }

  std::vector<T> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = T{1} / std::sqrt(var[c] + bn.eps);

  Var<T> gamma = x.tape->param(bn.gamma);
  Var<T> beta = x.tape->param(bn.beta);
  const auto& gv = bn.gamma.value;
  const auto& bv = bn.beta.value;
  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = index(o, c, i);
        xhat[k] = (xv[k] - mean[c]) * inv_std[c];
        out[k] = gv[c] * xhat[k] + bv[c];
      }

  const bool batch_stats = mode == Mode::train;
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std, outer, channels, inner, count, batch_stats, index](
          Tape<T>& tape, std::size_t self) {
        const auto& g = tape.grad(self);
        const auto& gv = tape.value(gamma.id);
        std::vector<T> sum_g(channels, T{0}), sum_gx(channels, T{0});
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t k = index(o, c, i);
              sum_g[c] += g[k];
              sum_gx[c] += g[k] * xhat[k];
            }
        if (tape.needs_grad(gamma.id)) {
          auto& gg = tape.grad_mut(gamma.id);
          for (std::size_t c = 0; c < channels; ++c) gg[c] += sum_gx[c];
        }
        if (tape.needs_grad(beta.id)) {
          auto& gb = tape.grad_mut(beta.id);
          for (std::size_t c = 0; c < channels; ++c) gb[c] += sum_g[c];
        }
        if (tape.needs_grad(x.id)) {
          auto& gx = tape.grad_mut(x.id);
          const T n = static_cast<T>(count);
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = index(o, c, i);
                if (batch_stats)
                  gx[k] += gv[c] * inv_std[c] * (g[k] - sum_g[c] / n - xhat[k] * sum_gx[c] / n);
                else
                  gx[k] += gv[c] * inv_std[c] * g[k];
              }
        }
      });
}

}  // namespace

template <typename T>
Var<T> batch_norm(Var<T> x, BatchNorm<T>& bn, Mode mode) {
  require_rank("batch_norm", x, 2);
  return batch_norm_impl(x, bn, mode, x.dim(0), x.dim(1), 1);
}

template <typename T>
Var<T> batch_norm_spatial(Var<T> x, BatchNorm<T>& bn, Mode mode) {
  require_rank("batch_norm_spatial", x, 4);
  return batch_norm_impl(x, bn, mode, x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride, std::size_t padding) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), ksize = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != ksize)
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  if (bias.value().size() != cout) throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " for " +
                                                    std::to_string(cout) + " output channels");
  if (stride == 0) throw ArgumentError("conv2d: stride must be positive");
  if (h + 2 * padding < ksize || w + 2 * padding < ksize) throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t oh = (h + 2 * padding - ksize) / stride + 1;
  const std::size_t ow = (w + 2 * padding - ksize) / stride + 1;

  // Visits every (output, weight, input) triple that contributes.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::size_t out_idx = ((b * cout + o) * oh + y) * ow + xo;
            for (std::size_t c = 0; c < cin; ++c)
              for (std::size_t ky = 0; ky < ksize; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < ksize; ++kx) {
                  const std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(xo * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  const std::size_t in_idx = ((b * cin + c) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
                  const std::size_t w_idx = ((o * cin + c) * ksize + ky) * ksize + kx;
                  fn(out_idx, in_idx, w_idx);
                }
              }
          }
  };

  const auto& xv = x.value();
  const auto& wv = weight.value();
  const auto& bv = bias.value();
  Tensor<T> out({batch, cout, oh, ow});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t k = 0; k < oh * ow; ++k) out[(b * cout + o) * oh * ow + k] = bv[o];
  for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { out[oi] += wv[wi] * xv[ii]; });

  return x.tape->record(std::move(out), {x, weight, bias},
                        [x, weight, bias, for_each_tap, batch, cout, oh, ow](Tape<T>& tape, std::size_t self) {
                          const auto& g = tape.grad(self);
                          const auto& xv = tape.value(x.id);
                          const auto& wv = tape.value(weight.id);
                          if (tape.needs_grad(x.id)) {
                            auto& gx = tape.grad_mut(x.id);
                            for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gx[ii] += wv[wi] * g[oi]; });
                          }
                          if (tape.needs_grad(weight.id)) {
                            auto& gw = tape.grad_mut(weight.id);
                            for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gw[wi] += xv[ii] * g[oi]; });
                          }
                          if (tape.needs_grad(bias.id)) {
                            auto& gb = tape.grad_mut(bias.id);
                            for (std::size_t b = 0; b < batch; ++b)
                              for (std::size_t o = 0; o < cout; ++o)
                                for (std::size_t k = 0; k < oh * ow; ++k) gb[o] += g[(b * cout + o) * oh * ow + k];
                          }
                        });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  require_rank("global_avg_pool", x, 4);
  const std::size_t batch = x.dim(0), channels = x.dim(1), area = x.dim(2) * x.dim(3);
  const auto& xv = x.value();
  Tensor<T> out({batch, channels});
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    T acc{0};
    for (std::size_t k = 0; k < area; ++k) acc += xv[bc * area + k];
    out[bc] = acc / static_cast<T>(area);
  }
  return x.tape->record(std::move(out), {x}, [x, batch, channels, area](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& gx = tape.grad_mut(x.id);
    for (std::size_t bc = 0; bc < batch * channels; ++bc)
      for (std::size_t k = 0; k < area; ++k) gx[bc * area + k] += g[bc] / static_cast<T>(area);
  });
}

#define BRAINENC_INSTANTIATE_OPS(T)                                                                \
  template Var<T> matmul(Var<T>, Var<T>);                                                          \
  template Var<T> add(Var<T>, Var<T>);                                                             \
  template Var<T> sub(Var<T>, Var<T>);                                                             \
  template Var<T> mul(Var<T>, Var<T>);                                                             \
  template Var<T> div(Var<T>, Var<T>);                                                             \
  template Var<T> add_scalar(Var<T>, T);                                                           \
  template Var<T> mul_scalar(Var<T>, T);                                                           \
  template Var<T> add_bias(Var<T>, Var<T>);                                                        \
  template Var<T> relu(Var<T>);                                                                    \
  template Var<T> tanh(Var<T>);                                                                    \
  template Var<T> square(Var<T>);                                                                  \
  template Var<T> sqrt(Var<T>);                                                                    \
  template Var<T> sqrt_eps(Var<T>);                                                                \
  template Var<T> clamp_min(Var<T>, T);                                                            \
  template Var<T> sum_all(Var<T>);                                                                 \
  template Var<T> mean_all(Var<T>);                                                                \
  template Var<T> sum_axis(Var<T>, std::size_t);                                                   \
  template Var<T> mean_axis(Var<T>, std::size_t);                                                  \
  template Var<T> center_axis(Var<T>, std::size_t);                                                \
  template Var<T> concat_last(Var<T>, Var<T>);                                                     \
  template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                               \
  template Var<T> gather_cols(Var<T>, std::span<const std::size_t>);                               \
  template Var<T> scatter_add_cols(Var<T>, Var<T>, std::span<const std::size_t>);                  \
  template Var<T> scale_cols(Var<T>, std::span<const T>);                                          \
  template Var<T> reshape(Var<T>, Shape);                                                          \
  template Var<T> batch_norm(Var<T>, BatchNorm<T>&, Mode);                                         \
  template Var<T> batch_norm_spatial(Var<T>, BatchNorm<T>&, Mode);                                 \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);                        \
  template Var<T> global_avg_pool(Var<T>);

BRAINENC_INSTANTIATE_OPS(float)
BRAINENC_INSTANTIATE_OPS(double)

#undef BRAINENC_INSTANTIATE_OPS

}  // namespace brainenc::nd

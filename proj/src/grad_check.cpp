#include "brainenc/ndiff/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace brainenc::nd {

namespace {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Fourth-order central difference from f(x-2h), f(x-h), f(x+h), f(x+2h).
double five_point(double m2, double m1, double p1, double p2, double h) {
  return ((m2 - p2) + 8.0 * (p1 - m1)) / (12.0 * h);
}

double scalar_of(const Tensor<double>& t) {
  if (t.size() != 1) throw ArgumentError("grad_check: function output has shape " + shape_str(t.shape()) + ", expected a scalar");
  return t[0];
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor<double>& x, double eps) {
  Tensor<double> analytic;
  {
    Tape<double> tape;
    Var<double> xv = tape.variable(x);
    Var<double> y = f(tape, xv);
    scalar_of(y.value());
    tape.backward(y);
    analytic = tape.has_grad(xv.id) ? tape.grad(xv.id) : Tensor<double>(x.shape());
  }
  auto eval = [&](const Tensor<double>& at) {
    Tape<double> tape;
    return scalar_of(f(tape, tape.constant(at)).value());
  };
  double worst = 0.0;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v[4];
    const double offsets[4] = {-2.0 * eps, -eps, eps, 2.0 * eps};
    for (int k = 0; k < 4; ++k) {
      probe[i] = x[i] + offsets[k];
      v[k] = eval(probe);
    }
    probe[i] = x[i];
    worst = std::max(worst, relative_error(analytic[i], five_point(v[0], v[1], v[2], v[3], eps)));
  }
  return worst;
}

double grad_check_parameter(const std::function<Var<double>(Tape<double>&)>& f, Parameter<double>& p, double eps) {
  const Tensor<double> original = p.value;
  const bool trainable = p.trainable;
  p.trainable = true;
  p.zero_grad();
  {
    Tape<double> tape;
    Var<double> y = f(tape);
    scalar_of(y.value());
    tape.backward(y);
  }
  const Tensor<double> analytic = p.grad;
  auto eval = [&] {
    Tape<double> tape;
    return scalar_of(f(tape).value());
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    double v[4];
    const double offsets[4] = {-2.0 * eps, -eps, eps, 2.0 * eps};
    for (int k = 0; k < 4; ++k) {
      p.value[i] = original[i] + offsets[k];
      v[k] = eval();
    }
    p.value[i] = original[i];
    worst = std::max(worst, relative_error(analytic[i], five_point(v[0], v[1], v[2], v[3], eps)));
  }
  p.value = original;
  p.trainable = trainable;
  return worst;
}

}  // namespace brainenc::nd

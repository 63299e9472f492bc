#pragma once

#include <functional>

#include "brainenc/ndiff/tape.hpp"

namespace brainenc::nd {

using ScalarFn = std::function<Var<double>(Tape<double>&, Var<double>)>;

/// Largest relative error between the tape gradient of `f` at `x` and the
/// fourth-order central difference
///   (f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h,  h = eps,
/// with relative error |a-b| / max(|a|, |b|, 1e-8). Throws ArgumentError when
/// f is not scalar-valued.
double grad_check(const ScalarFn& f, const Tensor<double>& x, double eps = 1e-4);

/// Same check against a parameter that `f` reads through its own tape.
/// The parameter value is restored before returning.
double grad_check_parameter(const std::function<Var<double>(Tape<double>&)>& f, Parameter<double>& p,
                            double eps = 1e-4);

}  // namespace brainenc::nd

#pragma once

#include <cstddef>
#include <functional>

#include "xmodal/tensor.hpp"

namespace xmodal {

using ScalarFn = std::function<double(const Tensor&)>;

// Central-difference gradient of f at x: (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-5);

// |a - b| / max(1, |a|, |b|)
double relative_error(double a, double b);

struct ErrorLocation {
  double error = 0.0;
  std::size_t index = 0;
};

// Largest relative_error over matching entries of two same-shaped tensors.
ErrorLocation max_relative_error(const Tensor& a, const Tensor& b);

}  // namespace xmodal

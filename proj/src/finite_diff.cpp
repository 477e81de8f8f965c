#include "xmodal/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "xmodal/errors.hpp"

namespace xmodal {

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  Tensor grad = Tensor::zeros_like(x);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

ErrorLocation max_relative_error(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("max_relative_error: size mismatch");
  ErrorLocation worst;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = relative_error(a[i], b[i]);
    if (e > worst.error || std::isnan(e)) {
      worst = {e, i};
      if (std::isnan(e)) break;
    }
  }
  return worst;
}

}  // namespace xmodal

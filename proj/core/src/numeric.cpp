#include "fedhd/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedhd {

double logsumexp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("logsumexp: empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) {
    // All entries -inf is a legitimate log(0); anything else is bad input.
    if (m == -std::numeric_limits<double>::infinity()) return m;
    throw std::invalid_argument("logsumexp: non-finite entry");
  }
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

double logsumexp(const Vector& v) {
  return logsumexp(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& f,
                        const Vector& x, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  Vector grad(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("finite_diff_grad: non-finite value at index " +
                               std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace fedhd

#pragma once

#include <functional>
#include <span>

#include "fedhd/matrix.hpp"

namespace fedhd {

// log(sum_i exp(v_i)) without overflow for entries up to +-700.
// Throws std::invalid_argument("empty vector") on empty input.
double logsumexp(std::span<const double> v);
double logsumexp(const Vector& v);

// Central-difference gradient oracle: entry i is
// (f(x + h e_i) - f(x - h e_i)) / (2 h). Used as the independent check for
// every analytic gradient in the library; keep it free of any shared code
// with the gradients it verifies.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f,
                        const Vector& x, double h = 1e-5);

}  // namespace fedhd

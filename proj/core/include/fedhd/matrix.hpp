#pragma once

#include <Eigen/Dense>

namespace fedhd {

// Patch features, covariances and synthetic embeddings are all dense
// row-major double matrices: one row per patch / embedding.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace fedhd

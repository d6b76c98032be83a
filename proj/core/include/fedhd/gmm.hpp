#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fedhd/matrix.hpp"
#include "fedhd/rng.hpp"

namespace fedhd {

enum class CovMode { Full, Diagonal };

// One mixture component. `cov` (d x d) is populated in Full mode, `var`
// (per-dimension variances) in Diagonal mode; the other member stays empty.
struct GaussianComponent {
  Vector mean;
  Matrix cov;
  Vector var;
};

// Fixed-weight Gaussian mixture fitted to one slide's patch features.
// Mixing weights are uniform (1/M) and never updated; only means and
// covariances move during EM.
struct GmmModel {
  CovMode cov_mode = CovMode::Full;
  double eps_reg = 1e-6;
  Vector weights;
  std::vector<GaussianComponent> components;

  int component_count() const { return static_cast<int>(components.size()); }
  Eigen::Index dim() const {
    return components.empty() ? 0 : components.front().mean.size();
  }
};

struct GmmFitResult {
  GmmModel model;
  Matrix responsibilities;  // K x M, rows sum to 1
  std::vector<double> log_likelihood_trace;
  int iterations = 0;  // number of M-steps taken
  bool converged = false;
};

struct GmmFitOptions {
  int max_iter = 100;
  double tol = 1e-6;  // relative log-likelihood improvement
};

// EM with k-means++-seeded means and fixed uniform weights. The requested
// component count is clamped to max(1, min(M, K/2)) so every component can
// support a covariance estimate. Throws std::invalid_argument for K < 2
// ("insufficient patches") or non-finite input.
GmmFitResult fit_gmm(const Matrix& points, int components, CovMode cov_mode,
                     double eps_reg, const GmmFitOptions& opts, RngStream& rng);

// Per-point, per-component log N(x_k; mu_m, Sigma_m); K x M.
Matrix component_log_densities(const GmmModel& model, const Matrix& points);

// E-step posteriors, computed in log space. Rows sum to 1.
Matrix responsibilities(const GmmModel& model, const Matrix& points);

// sum_k log sum_m pi_m N(x_k; mu_m, Sigma_m)
double log_likelihood(const GmmModel& model, const Matrix& points);

// The (mean, covariance) pairs consumed by the alignment loss.
std::vector<GaussianComponent> component_moments(const GmmModel& model);

// Experiment checkpointing; exact 64-bit round-trip.
void save_gmm(std::ostream& out, const GmmModel& model);
GmmModel load_gmm(std::istream& in);
void save_gmm(const std::string& path, const GmmModel& model);
GmmModel load_gmm(const std::string& path);

}  // namespace fedhd

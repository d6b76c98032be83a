#include "fedhd/gmm.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fedhd/numeric.hpp"

namespace fedhd {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
constexpr double kStarvedCount = 1e-12;

void check_model_points(const GmmModel& model, const Matrix& points) {
  if (model.components.empty()) throw std::invalid_argument("gmm: empty model");
  if (points.cols() != model.dim())
    throw std::invalid_argument("gmm: dimension mismatch between model and points");
  if (!all_finite(points)) throw std::invalid_argument("gmm: non-finite input");
}

// Log-density of every point under one component, appended as column m.
void fill_log_density_column(const GmmModel& model, const Matrix& points,
                             int m, Matrix& out) {
  const auto& comp = model.components[static_cast<std::size_t>(m)];
  const Eigen::Index d = points.cols();
  Matrix centered = points.rowwise() - comp.mean.transpose();
  if (model.cov_mode == CovMode::Diagonal) {
    double log_det = 0.0;
    for (Eigen::Index a = 0; a < d; ++a) log_det += std::log(comp.var[a]);
    Vector inv_var = comp.var.cwiseInverse();
    Vector quad = (centered.array().square().matrix() * inv_var);
    out.col(m) = (-0.5) * (quad.array() + static_cast<double>(d) * kLog2Pi + log_det);
  } else {
    Eigen::LLT<Eigen::MatrixXd> llt(comp.cov);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("gmm: covariance not positive definite");
    Eigen::MatrixXd l = llt.matrixL();
    double log_det = 0.0;
    for (Eigen::Index a = 0; a < d; ++a) log_det += 2.0 * std::log(l(a, a));
    // Solve L y = (x - mu) for each point; quad = |y|^2.
    Eigen::MatrixXd y = l.triangularView<Eigen::Lower>().solve(centered.transpose());
    Vector quad = y.colwise().squaredNorm().transpose();
    out.col(m) = (-0.5) * (quad.array() + static_cast<double>(d) * kLog2Pi + log_det);
  }
}

struct EStep {
  Matrix resp;
  double log_likelihood = 0.0;
};

EStep e_step(const GmmModel& model, const Matrix& points) {
  const Eigen::Index k = points.rows();
  const int m_count = model.component_count();
  Matrix log_joint = component_log_densities(model, points);
  for (int m = 0; m < m_count; ++m)
    log_joint.col(m).array() += std::log(model.weights[m]);
  EStep result;
  result.resp.resize(k, m_count);
  for (Eigen::Index i = 0; i < k; ++i) {
    Vector row = log_joint.row(i).transpose();
    const double lse = logsumexp(row);
    result.log_likelihood += lse;
    result.resp.row(i) = (row.array() - lse).exp().matrix().transpose();
  }
  return result;
}

void m_step(GmmModel& model, const Matrix& points, const Matrix& resp) {
  const Eigen::Index d = points.cols();
  for (int m = 0; m < model.component_count(); ++m) {
    const Vector r = resp.col(m);
    const double total = r.sum();
    if (total < kStarvedCount) continue;  // starved component keeps its moments
    auto& comp = model.components[static_cast<std::size_t>(m)];
    comp.mean = (points.transpose() * r) / total;
    Matrix centered = points.rowwise() - comp.mean.transpose();
    if (model.cov_mode == CovMode::Diagonal) {
      comp.var = (centered.array().square().matrix().transpose() * r) / total;
      comp.var.array() += model.eps_reg;
    } else {
      Matrix cov =
          centered.transpose() * r.asDiagonal() * centered / total;
      cov = 0.5 * (cov + cov.transpose());
      cov.diagonal().array() += model.eps_reg;
      comp.cov = cov;
    }
  }
}

// k-means++ seeding: means drawn from the data, each proportional to the
// squared distance from the nearest already-chosen seed.
std::vector<Eigen::Index> kmeanspp_seeds(const Matrix& points, int m_count,
                                         RngStream& rng) {
  const Eigen::Index k = points.rows();
  std::vector<Eigen::Index> seeds;
  seeds.reserve(static_cast<std::size_t>(m_count));
  seeds.push_back(static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(k))));
  Vector min_d2 = (points.rowwise() - points.row(seeds[0])).rowwise().squaredNorm();
  while (static_cast<int>(seeds.size()) < m_count) {
    const double total = min_d2.sum();
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(k)));
    } else {
      double u = rng.uniform() * total;
      for (Eigen::Index i = 0; i < k; ++i) {
        u -= min_d2[i];
        if (u <= 0.0) {
          pick = i;
          break;
        }
        pick = i;
      }
    }
    seeds.push_back(pick);
    Vector d2 = (points.rowwise() - points.row(pick)).rowwise().squaredNorm();
    min_d2 = min_d2.cwiseMin(d2);
  }
  return seeds;
}

}  // namespace

GmmFitResult fit_gmm(const Matrix& points, int components, CovMode cov_mode,
                     double eps_reg, const GmmFitOptions& opts, RngStream& rng) {
  const Eigen::Index k = points.rows();
  const Eigen::Index d = points.cols();
  if (k < 2) throw std::invalid_argument("fit_gmm: insufficient patches (K < 2)");
  if (d < 1) throw std::invalid_argument("fit_gmm: empty dimension");
  if (components < 1) throw std::invalid_argument("fit_gmm: M must be >= 1");
  if (eps_reg <= 0.0) throw std::invalid_argument("fit_gmm: eps_reg must be > 0");
  if (!all_finite(points)) throw std::invalid_argument("fit_gmm: non-finite input");

  const int m_eff = std::max(1, std::min<int>(components, static_cast<int>(k / 2)));

  GmmModel model;
  model.cov_mode = cov_mode;
  model.eps_reg = eps_reg;
  model.weights = Vector::Constant(m_eff, 1.0 / m_eff);
  model.components.resize(static_cast<std::size_t>(m_eff));

  // Global population moments seed every covariance.
  Vector global_mean = points.colwise().mean().transpose();
  Matrix centered = points.rowwise() - global_mean.transpose();
  const auto seeds = kmeanspp_seeds(points, m_eff, rng);
  for (int m = 0; m < m_eff; ++m) {
    auto& comp = model.components[static_cast<std::size_t>(m)];
    comp.mean = points.row(seeds[static_cast<std::size_t>(m)]).transpose();
    if (cov_mode == CovMode::Diagonal) {
      comp.var = centered.array().square().colwise().mean().matrix().transpose();
      comp.var.array() += eps_reg;
    } else {
      Matrix cov = centered.transpose() * centered / static_cast<double>(k);
      cov = 0.5 * (cov + cov.transpose());
      cov.diagonal().array() += eps_reg;
      comp.cov = cov;
    }
  }

  GmmFitResult result;
  double prev_ll = 0.0;
  for (int iter = 0;; ++iter) {
    EStep e = e_step(model, points);
    result.log_likelihood_trace.push_back(e.log_likelihood);
    const bool improved_below_tol =
        iter > 0 &&
        (e.log_likelihood - prev_ll) < opts.tol * (std::abs(prev_ll) + 1.0);
    if (iter >= opts.max_iter || improved_below_tol) {
      result.model = std::move(model);
      result.responsibilities = std::move(e.resp);
      result.iterations = iter;
      result.converged = improved_below_tol;
      return result;
    }
    prev_ll = e.log_likelihood;
    m_step(model, points, e.resp);
  }
}

Matrix component_log_densities(const GmmModel& model, const Matrix& points) {
  check_model_points(model, points);
  Matrix out(points.rows(), model.component_count());
  for (int m = 0; m < model.component_count(); ++m)
    fill_log_density_column(model, points, m, out);
  return out;
}

Matrix responsibilities(const GmmModel& model, const Matrix& points) {
  return e_step(model, points).resp;
}

double log_likelihood(const GmmModel& model, const Matrix& points) {
  const Eigen::Index k = points.rows();
  Matrix log_joint = component_log_densities(model, points);
  for (int m = 0; m < model.component_count(); ++m)
    log_joint.col(m).array() += std::log(model.weights[m]);
  double total = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    Vector row = log_joint.row(i).transpose();
    total += logsumexp(row);
  }
  return total;
}

std::vector<GaussianComponent> component_moments(const GmmModel& model) {
  return model.components;
}

namespace {

constexpr char kGmmMagic[4] = {'F', 'G', 'M', 'M'};

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("gmm: truncated model stream");
  return value;
}

}  // namespace

void save_gmm(std::ostream& out, const GmmModel& model) {
  out.write(kGmmMagic, 4);
  write_pod<std::uint16_t>(out, 1);  // version
  write_pod<std::uint16_t>(out, model.cov_mode == CovMode::Full ? 0 : 1);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.component_count()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.dim()));
  write_pod<double>(out, model.eps_reg);
  for (const auto& comp : model.components) {
    out.write(reinterpret_cast<const char*>(comp.mean.data()),
              static_cast<std::streamsize>(sizeof(double)) * comp.mean.size());
    if (model.cov_mode == CovMode::Full) {
      out.write(reinterpret_cast<const char*>(comp.cov.data()),
                static_cast<std::streamsize>(sizeof(double)) * comp.cov.size());
    } else {
      out.write(reinterpret_cast<const char*>(comp.var.data()),
                static_cast<std::streamsize>(sizeof(double)) * comp.var.size());
    }
  }
  if (!out) throw std::runtime_error("gmm: write failed");
}

GmmModel load_gmm(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kGmmMagic, 4) != 0)
    throw std::runtime_error("gmm: bad magic");
  const auto version = read_pod<std::uint16_t>(in);
  if (version != 1) throw std::runtime_error("gmm: unsupported version");
  const auto mode = read_pod<std::uint16_t>(in);
  const auto m_count = read_pod<std::uint32_t>(in);
  const auto d = read_pod<std::uint32_t>(in);
  GmmModel model;
  model.cov_mode = mode == 0 ? CovMode::Full : CovMode::Diagonal;
  model.eps_reg = read_pod<double>(in);
  model.weights = Vector::Constant(m_count, 1.0 / m_count);
  model.components.resize(m_count);
  for (auto& comp : model.components) {
    comp.mean.resize(d);
    in.read(reinterpret_cast<char*>(comp.mean.data()),
            static_cast<std::streamsize>(sizeof(double)) * d);
    if (model.cov_mode == CovMode::Full) {
      comp.cov.resize(d, d);
      in.read(reinterpret_cast<char*>(comp.cov.data()),
              static_cast<std::streamsize>(sizeof(double)) * d * d);
    } else {
      comp.var.resize(d);
      in.read(reinterpret_cast<char*>(comp.var.data()),
              static_cast<std::streamsize>(sizeof(double)) * d);
    }
    if (!in) throw std::runtime_error("gmm: truncated model stream");
  }
  return model;
}

void save_gmm(const std::string& path, const GmmModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("gmm: cannot open " + path);
  save_gmm(out, model);
}

GmmModel load_gmm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("gmm: cannot open " + path);
  return load_gmm(in);
}

}  // namespace fedhd

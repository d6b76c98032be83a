#include "fedhd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "fedhd/parallel.hpp"

namespace fedhd {
namespace {

constexpr std::uint64_t kGmmSalt = 0x676d6d;    // "gmm"
constexpr std::uint64_t kInitSalt = 0x696e6974;  // "init"
constexpr std::uint64_t kPoolSalt = 0x706f6f6c;  // "pool"

struct ComponentGroups {
  std::vector<std::vector<Eigen::Index>> members;
};

ComponentGroups group_by_component(const std::vector<GaussianComponent>& moments,
                                   const SyntheticSlide& syn) {
  const int m_count = static_cast<int>(moments.size());
  if (m_count == 0) throw std::invalid_argument("align_loss: no components");
  if (static_cast<Eigen::Index>(syn.assignment.size()) != syn.features.rows())
    throw std::invalid_argument("align_loss: assignment/feature size mismatch");
  if (moments.front().mean.size() != syn.features.cols())
    throw std::invalid_argument("align_loss: dimension mismatch");
  ComponentGroups groups;
  groups.members.resize(static_cast<std::size_t>(m_count));
  for (Eigen::Index j = 0; j < syn.features.rows(); ++j) {
    const int m = syn.assignment[static_cast<std::size_t>(j)];
    if (m < 0 || m >= m_count)
      throw std::invalid_argument("align_loss: assignment index out of range");
    groups.members[static_cast<std::size_t>(m)].push_back(j);
  }
  for (const auto& g : groups.members) {
    if (g.size() < 2)
      throw std::invalid_argument(
          "align_loss: component with fewer than 2 synthetic members");
  }
  return groups;
}

bool diagonal_moments(const std::vector<GaussianComponent>& moments) {
  return moments.front().var.size() > 0;
}

Matrix gather_rows(const Matrix& features, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    out.row(i) = features.row(rows[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

CovMode resolve_cov_mode(CovChoice choice, Eigen::Index dim) {
  switch (choice) {
    case CovChoice::Full:
      return CovMode::Full;
    case CovChoice::Diagonal:
      return CovMode::Diagonal;
    case CovChoice::Auto:
    default:
      return dim > 128 ? CovMode::Diagonal : CovMode::Full;
  }
}

SyntheticSlide init_synthetic(const GmmModel& model, int label, int synthetic_patches,
                              InitStrategy strategy, RngStream& rng) {
  const int m_count = model.component_count();
  const Eigen::Index d = model.dim();
  if (m_count < 1) throw std::invalid_argument("init_synthetic: empty model");
  if (synthetic_patches < 2 * m_count)
    throw std::invalid_argument("init_synthetic: insufficient synthetic budget (T < 2M)");

  SyntheticSlide syn;
  syn.label = label;
  syn.features.resize(synthetic_patches, d);
  syn.assignment.reserve(static_cast<std::size_t>(synthetic_patches));

  const int base = synthetic_patches / m_count;
  const int remainder = synthetic_patches % m_count;
  Eigen::Index row = 0;
  for (int m = 0; m < m_count; ++m) {
    const int count = base + (m < remainder ? 1 : 0);
    const auto& comp = model.components[static_cast<std::size_t>(m)];
    Eigen::LLT<Eigen::MatrixXd> llt;
    if (strategy == InitStrategy::ComponentSample && model.cov_mode == CovMode::Full) {
      llt.compute(comp.cov);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("init_synthetic: component covariance not PD");
    }
    for (int i = 0; i < count; ++i, ++row) {
      syn.assignment.push_back(m);
      Vector z = rng.normal_vector(d);
      if (strategy == InitStrategy::RandomNormal) {
        syn.features.row(row) = z.transpose();
      } else if (model.cov_mode == CovMode::Full) {
        syn.features.row(row) =
            (comp.mean + Eigen::MatrixXd(llt.matrixL()) * z).transpose();
      } else {
        syn.features.row(row) =
            (comp.mean.array() + comp.var.array().sqrt() * z.array()).transpose();
      }
    }
  }
  return syn;
}

double align_loss(const std::vector<GaussianComponent>& real_moments,
                  const SyntheticSlide& syn, bool mean_only) {
  const auto groups = group_by_component(real_moments, syn);
  const bool diagonal = diagonal_moments(real_moments);
  double loss = 0.0;
  for (std::size_t m = 0; m < real_moments.size(); ++m) {
    const auto& target = real_moments[m];
    Matrix pts = gather_rows(syn.features, groups.members[m]);
    const double n = static_cast<double>(pts.rows());
    Vector mu_hat = pts.colwise().mean().transpose();
    loss += (target.mean - mu_hat).squaredNorm();
    if (mean_only) continue;
    Matrix centered = pts.rowwise() - mu_hat.transpose();
    if (diagonal) {
      Vector var_hat = centered.array().square().colwise().mean().matrix().transpose();
      loss += (target.var - var_hat).squaredNorm();
    } else {
      Matrix cov_hat = centered.transpose() * centered / n;
      loss += (target.cov - cov_hat).squaredNorm();
    }
  }
  return loss;
}

Matrix align_loss_grad(const std::vector<GaussianComponent>& real_moments,
                       const SyntheticSlide& syn, bool mean_only) {
  const auto groups = group_by_component(real_moments, syn);
  const bool diagonal = diagonal_moments(real_moments);
  Matrix grad = Matrix::Zero(syn.features.rows(), syn.features.cols());
  for (std::size_t m = 0; m < real_moments.size(); ++m) {
    const auto& target = real_moments[m];
    const auto& rows = groups.members[m];
    Matrix pts = gather_rows(syn.features, rows);
    const double n = static_cast<double>(pts.rows());
    Vector mu_hat = pts.colwise().mean().transpose();
    Vector mean_term = (2.0 / n) * (mu_hat - target.mean);
    Matrix centered = pts.rowwise() - mu_hat.transpose();
    Matrix group_grad = Matrix::Zero(pts.rows(), pts.cols());
    group_grad.rowwise() += mean_term.transpose();
    if (!mean_only) {
      if (diagonal) {
        Vector var_hat = centered.array().square().colwise().mean().matrix().transpose();
        Vector scale = (4.0 / n) * (var_hat - target.var);
        group_grad += centered * scale.asDiagonal();
      } else {
        Matrix cov_hat = centered.transpose() * centered / n;
        Matrix g = cov_hat - target.cov;  // symmetric
        group_grad += (4.0 / n) * centered * g;
      }
    }
    for (Eigen::Index i = 0; i < group_grad.rows(); ++i)
      grad.row(rows[static_cast<std::size_t>(i)]) = group_grad.row(i);
  }
  return grad;
}

DistillResult distill_against(const GmmModel& model, int label,
                              const std::string& slide_id,
                              const std::string& source_slide_id,
                              const DistillConfig& cfg, RngStream rng) {
  if (cfg.iterations < 0)
    throw std::invalid_argument("distill: iterations must be >= 0");
  const auto moments = component_moments(model);
  RngStream init_rng = rng.fork(kInitSalt);
  SyntheticSlide syn = init_synthetic(model, label, cfg.synthetic_patches,
                                      cfg.init_strategy, init_rng);
  syn.slide_id = slide_id;
  syn.source_slide_id = source_slide_id;

  DistillResult result;
  const Matrix init_features = syn.features;
  result.initial_loss = align_loss(moments, syn, cfg.mean_only);
  if (cfg.iterations == 0) {
    result.final_loss = result.initial_loss;
    result.slide = std::move(syn);
    return result;
  }

  Matrix m1 = Matrix::Zero(syn.features.rows(), syn.features.cols());
  Matrix m2 = Matrix::Zero(syn.features.rows(), syn.features.cols());
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int t = 1; t <= cfg.iterations; ++t) {
    result.loss_trace.push_back(align_loss(moments, syn, cfg.mean_only));
    Matrix g = align_loss_grad(moments, syn, cfg.mean_only);
    m1 = cfg.adam_beta1 * m1 + (1.0 - cfg.adam_beta1) * g;
    m2 = cfg.adam_beta2 * m2 + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
    syn.features.array() -=
        cfg.learning_rate *
        (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_eps);
  }
  result.final_loss = align_loss(moments, syn, cfg.mean_only);
  if (result.final_loss > result.initial_loss) {
    // Optimization diverged; keep the initialization.
    syn.features = init_features;
    result.final_loss = result.initial_loss;
  }
  result.slide = std::move(syn);
  return result;
}

DistillResult distill_slide(const RealSlide& real, const DistillConfig& cfg,
                            RngStream& rng) {
  const CovMode mode = resolve_cov_mode(cfg.cov, real.features.cols());
  const int m_req = cfg.gaussian_mixture_alignment ? cfg.mixture_components : 1;
  RngStream gmm_rng = rng.fork(kGmmSalt);
  GmmFitResult fit =
      fit_gmm(real.features, m_req, mode, cfg.eps_reg, cfg.gmm, gmm_rng);
  return distill_against(fit.model, real.label, "syn_" + real.slide_id,
                         real.slide_id, cfg, rng);
}

ClientDistillResult distill_client(const std::vector<RealSlide>& slides,
                                   const DistillConfig& cfg,
                                   std::uint64_t master_seed, int threads) {
  if (slides.empty())
    throw std::invalid_argument("distill_client: empty slide list");

  ClientDistillResult out;
  if (cfg.one_to_one) {
    out.slides.resize(slides.size());
    out.loss_traces.resize(slides.size());
    out.initial_losses.resize(slides.size());
    out.final_losses.resize(slides.size());
    parallel_for(slides.size(), threads, [&](std::size_t i) {
      const RealSlide& real = slides[i];
      try {
        RngStream rng = spawn_stream(master_seed, hash64(real.slide_id));
        DistillResult r = distill_slide(real, cfg, rng);
        out.slides[i] = std::move(r.slide);
        out.loss_traces[i] = std::move(r.loss_trace);
        out.initial_losses[i] = r.initial_loss;
        out.final_losses[i] = r.final_loss;
      } catch (const std::exception& e) {
        throw std::runtime_error("slide '" + real.slide_id + "': " + e.what());
      }
    });
    return out;
  }

  // Pooled per-class mode (+FDD without O2O): slides_per_class synthetic
  // slides per class, each aligned to a mixture of the pooled class patches.
  if (cfg.slides_per_class < 1)
    throw std::invalid_argument("distill_client: slides_per_class must be >= 1");
  std::map<int, std::vector<const RealSlide*>> per_class;
  for (const auto& s : slides) per_class[s.label].push_back(&s);

  struct Task {
    int label;
    int index;
    const GmmModel* model;
  };
  std::map<int, GmmModel> class_models;
  const CovMode mode = resolve_cov_mode(cfg.cov, slides.front().features.cols());
  const int m_req = cfg.gaussian_mixture_alignment ? cfg.mixture_components : 1;
  for (const auto& [label, members] : per_class) {
    Eigen::Index total = 0;
    for (const auto* s : members) total += s->features.rows();
    Matrix pooled(total, slides.front().features.cols());
    Eigen::Index row = 0;
    for (const auto* s : members) {
      pooled.middleRows(row, s->features.rows()) = s->features;
      row += s->features.rows();
    }
    RngStream rng = spawn_stream(master_seed,
                                 mix64(kPoolSalt, static_cast<std::uint64_t>(label)));
    class_models[label] =
        fit_gmm(pooled, m_req, mode, cfg.eps_reg, cfg.gmm, rng).model;
  }
  std::vector<Task> tasks;
  for (const auto& [label, model] : class_models)
    for (int i = 0; i < cfg.slides_per_class; ++i)
      tasks.push_back({label, i, &model});

  out.slides.resize(tasks.size());
  out.loss_traces.resize(tasks.size());
  out.initial_losses.resize(tasks.size());
  out.final_losses.resize(tasks.size());
  parallel_for(tasks.size(), threads, [&](std::size_t i) {
    const Task& task = tasks[i];
    const std::string id =
        "syn_class" + std::to_string(task.label) + "_" + std::to_string(task.index);
    RngStream rng = spawn_stream(master_seed, hash64(id));
    DistillResult r =
        distill_against(*task.model, task.label, id,
                        "class:" + std::to_string(task.label), cfg, rng);
    out.slides[i] = std::move(r.slide);
    out.loss_traces[i] = std::move(r.loss_trace);
    out.initial_losses[i] = r.initial_loss;
    out.final_losses[i] = r.final_loss;
  });
  return out;
}

std::uint64_t payload_floats(std::uint64_t n_slides, std::uint64_t synthetic_patches,
                             std::uint64_t dim) {
  return n_slides * synthetic_patches * dim;
}

double payload_mb_f32(std::uint64_t floats) {
  return static_cast<double>(floats) * 4.0 / (1024.0 * 1024.0);
}

}  // namespace fedhd

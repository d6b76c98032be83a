#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedhd/gmm.hpp"
#include "fedhd/rng.hpp"
#include "fedhd/slide.hpp"

namespace fedhd {

enum class InitStrategy { ComponentSample, RandomNormal };

// Covariance representation choice; Auto resolves to Diagonal for d > 128
// and Full otherwise.
enum class CovChoice { Auto, Full, Diagonal };

CovMode resolve_cov_mode(CovChoice choice, Eigen::Index dim);

struct DistillConfig {
  int synthetic_patches = 1000;  // T, embeddings per synthetic slide
  int mixture_components = 16;   // M
  int iterations = 1000;
  double learning_rate = 0.01;
  InitStrategy init_strategy = InitStrategy::ComponentSample;
  CovChoice cov = CovChoice::Auto;
  double eps_reg = 1e-6;
  // Adam moment estimation
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  GmmFitOptions gmm;

  // Ablation switches. one_to_one=false distills `slides_per_class`
  // synthetic slides per class against a GMM of the pooled per-class
  // patches; gaussian_mixture_alignment=false degrades to single-component
  // (global mean + covariance) matching; mean_only drops the covariance
  // term entirely.
  bool one_to_one = true;
  bool gaussian_mixture_alignment = true;
  bool mean_only = false;
  int slides_per_class = 10;
};

// Allocates T embeddings across the model's components proportionally to the
// (uniform) weights: floor(T/M) each, remainder round-robin from component 0.
// ComponentSample draws each embedding from its component's fitted Gaussian;
// RandomNormal draws standard normal entries. The assignment is fixed for
// the lifetime of the slide. Throws "insufficient synthetic budget" when
// T < 2M.
SyntheticSlide init_synthetic(const GmmModel& model, int label, int synthetic_patches,
                              InitStrategy strategy, RngStream& rng);

// sum_m ( |mu_m - mu_hat_m|^2 + |Sigma_m - Sigma_hat_m|_F^2 ) where the
// hatted moments are the population mean/covariance of the embeddings
// assigned to component m. Diagonal moments compare variance vectors under
// the squared Euclidean norm. Requires >= 2 members per component.
double align_loss(const std::vector<GaussianComponent>& real_moments,
                  const SyntheticSlide& syn, bool mean_only = false);

// Exact gradient of align_loss with respect to every synthetic embedding
// (assignments held constant); T x d.
Matrix align_loss_grad(const std::vector<GaussianComponent>& real_moments,
                       const SyntheticSlide& syn, bool mean_only = false);

struct DistillResult {
  SyntheticSlide slide;
  std::vector<double> loss_trace;  // loss at each iterate, before its update
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Fits the slide's mixture, initializes a synthetic slide and runs
// cfg.iterations Adam steps on align_loss. Guaranteed final_loss <=
// initial_loss (falls back to the initialization when optimization fails to
// improve, which does not happen in practice).
DistillResult distill_slide(const RealSlide& real, const DistillConfig& cfg,
                            RngStream& rng);

// Optimizes one synthetic slide against an already-fitted mixture.
DistillResult distill_against(const GmmModel& model, int label,
                              const std::string& slide_id,
                              const std::string& source_slide_id,
                              const DistillConfig& cfg, RngStream rng);

struct ClientDistillResult {
  std::vector<SyntheticSlide> slides;
  std::vector<std::vector<double>> loss_traces;  // aligned with slides
  std::vector<double> initial_losses;
  std::vector<double> final_losses;
};

// One synthetic slide per real slide (one-to-one), or slides_per_class
// per class against pooled per-class mixtures when cfg.one_to_one is off.
// Per-slide RNG streams are derived from (master_seed, hash of slide id),
// so results do not depend on input order or thread scheduling.
ClientDistillResult distill_client(const std::vector<RealSlide>& slides,
                                   const DistillConfig& cfg,
                                   std::uint64_t master_seed, int threads = 1);

// Upload accounting: a client sharing n_slides synthetic slides of T
// embeddings in R^d transmits n_slides*T*d floating-point values plus one
// label per slide.
std::uint64_t payload_floats(std::uint64_t n_slides, std::uint64_t synthetic_patches,
                             std::uint64_t dim);
double payload_mb_f32(std::uint64_t floats);

}  // namespace fedhd

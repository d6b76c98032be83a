#pragma once

#include <cstdint>
#include <vector>

#include "fedhd/distill.hpp"
#include "fedhd/matrix.hpp"
#include "fedhd/rng.hpp"
#include "fedhd/slide.hpp"

namespace fedhd {

enum class ScoreAggregation { Max, Mean };

struct MiaConfig {
  double member_fraction = 0.8;
  ScoreAggregation aggregation = ScoreAggregation::Mean;
  int seeds = 10;
};

// u . v / (|u| |v|); throws on a zero vector.
double cosine_similarity(const Vector& u, const Vector& v);

// Attack score for one slide against a released pool of synthetic
// embeddings: per patch, the maximum cosine similarity to any pool
// embedding, aggregated over patches by max or mean.
double attack_score(const Matrix& slide_features, const Matrix& pool_embeddings,
                    ScoreAggregation aggregation);

// Stacks every embedding of every released slide into one pool matrix.
Matrix stack_pool(const std::vector<SyntheticSlide>& slides);

// The copy-release comparator: "synthetic" slides that are verbatim
// subsamples of the member slides' real patches. Upper-bounds leakage.
std::vector<SyntheticSlide> copy_release_pool(const std::vector<RealSlide>& members,
                                              int patches_per_slide, RngStream& rng);

struct MiaSeedResult {
  std::uint64_t seed = 0;
  double auc = 0.0;
};

struct MiaResult {
  std::vector<MiaSeedResult> per_seed;
  double max_auc = 0.0;
  double mean_auc = 0.0;
};

// Membership inference against the released feature embeddings: per seed,
// slides are split into member / non-member sets, the member set is
// distilled, and the attack scores every slide against the released pool;
// the AUC measures member vs non-member separation. The attack targets the
// shared features directly (no reconstruction step), i.e. a strictly
// stronger adversary than one that must first invert embeddings to images.
MiaResult mia_attack(const std::vector<RealSlide>& client_slides,
                     const DistillConfig& distill_cfg, const MiaConfig& mia_cfg,
                     std::uint64_t master_seed, int threads = 1);

// Same protocol, but the released pool is the copy-release comparator
// instead of distilled slides.
MiaResult mia_attack_copy_release(const std::vector<RealSlide>& client_slides,
                                  int patches_per_slide, const MiaConfig& mia_cfg,
                                  std::uint64_t master_seed);

}  // namespace fedhd

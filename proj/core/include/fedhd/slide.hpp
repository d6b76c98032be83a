#pragma once

#include <string>
#include <vector>

#include "fedhd/matrix.hpp"

namespace fedhd {

// One whole-slide image reduced to its bag of patch embeddings: a K x d
// matrix (one row per patch) plus a slide-level class label.
struct FeatureBag {
  std::string slide_id;
  int label = 0;
  Matrix features;  // K x d

  Eigen::Index patch_count() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

using RealSlide = FeatureBag;

// A distilled counterpart of one real slide: T learnable embeddings, each
// pinned to one mixture component at initialization. The assignment never
// changes after init.
struct SyntheticSlide {
  std::string slide_id;
  std::string source_slide_id;
  int label = 0;
  Matrix features;              // T x d
  std::vector<int> assignment;  // size T, component index per embedding

  Eigen::Index embedding_count() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

}  // namespace fedhd

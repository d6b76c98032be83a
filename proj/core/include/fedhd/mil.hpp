#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fedhd/matrix.hpp"
#include "fedhd/rng.hpp"
#include "fedhd/slide.hpp"

namespace fedhd {

enum class MilVariant { MeanPool, GatedAttention };

// Bag-level classifier. MeanPool scores the mean embedding; GatedAttention
// pools with score_k = w^T (tanh(V b_k) .* sigmoid(U b_k)) and a softmax over
// patches. Both are permutation-invariant in the bag rows.
struct MilModel {
  MilVariant variant = MilVariant::MeanPool;
  int input_dim = 0;
  int hidden_dim = 0;  // gated attention only
  int class_count = 2;
  Matrix classifier_w;  // class_count x input_dim
  Vector classifier_b;  // class_count
  Matrix attn_v;        // hidden_dim x input_dim
  Matrix attn_u;        // hidden_dim x input_dim
  Vector attn_w;        // hidden_dim

  Eigen::Index parameter_count() const;
  Vector flatten() const;
  void unflatten(const Vector& params);
};

// Zero biases, weight entries drawn normal with std 1/sqrt(fan-in).
MilModel make_mil_model(MilVariant variant, int input_dim, int class_count,
                        int hidden_dim, RngStream& rng);

struct MilForward {
  Vector probs;      // class simplex
  Vector attention;  // per-patch weights; empty for MeanPool
};

MilForward forward(const MilModel& model, const Matrix& bag);

enum class LossKind { CrossEntropy, Gce };

// Predicted probability for the true class is clamped to >= 1e-7 before
// either loss; the GCE gradient -p^(q-1) diverges at 0 otherwise.
double loss_ce(const Vector& probs, int label);
double loss_gce(const Vector& probs, int label, double q);

struct MilGradients {
  Matrix classifier_w;
  Vector classifier_b;
  Matrix attn_v;
  Matrix attn_u;
  Vector attn_w;

  Vector flatten() const;  // same layout as MilModel::flatten
};

// Exact gradients of the chosen loss with respect to all model parameters.
MilGradients backward(const MilModel& model, const Matrix& bag, int label,
                      LossKind loss, double q = 0.7);

// params += scale * grads
void apply_gradients(MilModel& model, const MilGradients& grads, double scale);

// A non-owning (features, label) view; lets real and synthetic slides feed
// the same training loop.
struct BagView {
  const Matrix* features = nullptr;
  int label = 0;
};

inline BagView view(const FeatureBag& bag) { return {&bag.features, bag.label}; }
inline BagView view(const SyntheticSlide& s) { return {&s.features, s.label}; }

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 50;
  double gce_q = 0.7;
  LossKind loss = LossKind::CrossEntropy;
};

struct EpochStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

// Shuffled single-bag gradient steps; deterministic given the stream.
TrainHistory train(MilModel& model, const std::vector<BagView>& bags,
                   const TrainConfig& cfg, RngStream& rng);

int predict(const MilModel& model, const Matrix& bag);

// Flat binary checkpoint with a self-describing header; exact round-trip.
void save_mil(std::ostream& out, const MilModel& model);
MilModel load_mil(std::istream& in);
void save_mil(const std::string& path, const MilModel& model);
MilModel load_mil(const std::string& path);

}  // namespace fedhd

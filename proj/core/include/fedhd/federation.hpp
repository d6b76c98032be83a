#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedhd/cohort.hpp"
#include "fedhd/distill.hpp"
#include "fedhd/metrics.hpp"
#include "fedhd/mil.hpp"

namespace fedhd {

struct MilSpec {
  MilVariant variant = MilVariant::MeanPool;
  int hidden_dim = 64;
};

struct ClientState {
  std::string client_id;
  std::vector<RealSlide> train;
  std::vector<RealSlide> test;
  MilSpec mil;
  std::vector<SyntheticSlide> synthetic;  // populated by distillation
};

// One synthetic slide as seen by a receiving client, with its origin client
// retained for the self-exclusion check.
struct PoolSlide {
  const SyntheticSlide* slide = nullptr;
  std::string origin_client;
};

struct GlobalPool {
  std::string client_id;  // the receiving client
  std::vector<PoolSlide> slides;
};

struct AggregateResult {
  std::map<std::string, GlobalPool> pools;
  std::vector<std::string> warnings;  // e.g. clients that shared nothing
};

// The single communication round: every client's synthetic slides are pooled
// and redistributed so that client c receives exactly the slides generated
// by the other clients.
AggregateResult aggregate_and_redistribute(const std::vector<ClientState>& clients);

enum class CurriculumTrigger { Fixed, Plateau };

struct CurriculumConfig {
  int t0 = 30;  // synthetic data enters at this epoch (Fixed trigger)
  double gce_q = 0.7;
  CurriculumTrigger trigger = CurriculumTrigger::Fixed;
  int plateau_patience = 5;
  double plateau_min_delta = 0.001;  // on training accuracy
  double synthetic_weight = 1.0;
};

struct LocalEpochStats {
  double real_loss = 0.0;
  double synthetic_loss = 0.0;
  double train_accuracy = 0.0;
  bool synthetic_active = false;
};

struct LocalTrainResult {
  MilModel model;
  std::vector<LocalEpochStats> history;
  int activation_epoch = -1;  // first epoch that consumed synthetic bags
};

using EpochHook = std::function<void(int epoch, const MilModel&)>;

// Curriculum-gated local training: real slides always contribute CE; pool
// slides contribute GCE (scaled by synthetic_weight) once the trigger fires.
// After activation each epoch interleaves real and synthetic bags in a
// seeded shuffle. Epoch shuffles and the model init consume RNG substreams
// that do not depend on the pool, so runs with an empty pool (or epochs
// before activation) are bit-identical to real-only training under the same
// stream.
LocalTrainResult curriculum_train(const ClientState& client, const GlobalPool& pool,
                                  const TrainConfig& train_cfg,
                                  const CurriculumConfig& cc, RngStream rng,
                                  const EpochHook& hook = nullptr);

// Baseline: synthetic slides join from epoch 0 with plain CE.
LocalTrainResult naive_concat_train(const ClientState& client, const GlobalPool& pool,
                                    const TrainConfig& train_cfg, RngStream rng,
                                    const EpochHook& hook = nullptr);

enum class Arm { LocalOnly, NaiveConcat, FedHd };

std::string arm_name(Arm arm);

struct ClientPayload {
  std::string client_id;
  std::uint64_t slides = 0;
  std::uint64_t floats = 0;  // slides * T * d
  std::uint64_t labels = 0;
  double mb_f32 = 0.0;
};

struct ProtocolConfig {
  DistillConfig distill;
  TrainConfig train;
  CurriculumConfig curriculum;
  bool run_local = true;
  bool run_naive = true;
  bool run_fedhd = true;
  int threads = 1;
};

struct FederationRunResult {
  std::map<Arm, EvalResult> arms;
  std::vector<ClientPayload> payload;
  std::vector<std::string> warnings;
  int aggregation_rounds = 0;  // always 1 for the single-round protocol
};

ClientEval evaluate_client(const MilModel& model, const ClientState& client,
                           int class_count);

// Full single-round protocol on an in-memory cohort: distill every client,
// aggregate once, train the requested arms, evaluate on each client's local
// test set. Clients keep their model parameters local throughout.
FederationRunResult run_federation(std::vector<ClientState>& clients,
                                   const ProtocolConfig& cfg, std::uint64_t seed);

}  // namespace fedhd

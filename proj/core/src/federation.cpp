#include "fedhd/federation.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "fedhd/parallel.hpp"

namespace fedhd {
namespace {

constexpr std::uint64_t kInitSalt = 0x696e6974;     // "init"
constexpr std::uint64_t kEpochSalt = 0x65706f63;    // "epoc"
constexpr std::uint64_t kDistillSalt = 0x64697374;  // "dist"
constexpr std::uint64_t kTrainSalt = 0x7472616e;    // "tran"

struct MixedTrainOptions {
  LossKind synthetic_loss = LossKind::Gce;
  double synthetic_weight = 1.0;
  double gce_q = 0.7;
  bool active_from_start = false;
  CurriculumConfig curriculum;  // used when !active_from_start
};

LocalTrainResult mixed_train(const ClientState& client, const GlobalPool& pool,
                             const TrainConfig& train_cfg, const MixedTrainOptions& opt,
                             RngStream rng, const EpochHook& hook) {
  if (client.train.empty())
    throw std::invalid_argument("train: client '" + client.client_id +
                                "' has no training slides");
  const Eigen::Index d = client.train.front().features.cols();
  int class_count = 0;
  for (const auto& s : client.train) class_count = std::max(class_count, s.label + 1);
  for (const auto& s : client.test) class_count = std::max(class_count, s.label + 1);
  for (const auto& p : pool.slides)
    class_count = std::max(class_count, p.slide->label + 1);
  class_count = std::max(class_count, 2);

  RngStream init_rng = rng.fork(kInitSalt);
  LocalTrainResult result;
  result.model = make_mil_model(client.mil.variant, static_cast<int>(d), class_count,
                                client.mil.hidden_dim, init_rng);

  const std::size_t n_real = client.train.size();
  const std::size_t n_syn = pool.slides.size();

  bool active = opt.active_from_start;
  double best_acc = -1.0;
  int epochs_since_improvement = 0;
  bool plateau_fired = opt.active_from_start;

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    if (!active) {
      if (opt.curriculum.trigger == CurriculumTrigger::Fixed)
        active = epoch >= opt.curriculum.t0;
      else
        active = plateau_fired;
    }
    const bool use_synthetic = active && n_syn > 0;

    // Item list: real indices first, then synthetic; the seeded shuffle
    // depends only on (stream, epoch, item count), so epochs without
    // synthetic items permute exactly as a real-only run would.
    std::vector<std::size_t> order(n_real + (use_synthetic ? n_syn : 0));
    std::iota(order.begin(), order.end(), 0);
    RngStream epoch_rng = rng.fork(mix64(kEpochSalt, static_cast<std::uint64_t>(epoch)));
    epoch_rng.shuffle(order);

    double real_loss = 0.0, syn_loss = 0.0;
    for (std::size_t item : order) {
      if (item < n_real) {
        const RealSlide& slide = client.train[item];
        MilForward fwd = forward(result.model, slide.features);
        real_loss += loss_ce(fwd.probs, slide.label);
        MilGradients grads = backward(result.model, slide.features, slide.label,
                                      LossKind::CrossEntropy, opt.gce_q);
        apply_gradients(result.model, grads, -train_cfg.learning_rate);
      } else {
        const SyntheticSlide& slide = *pool.slides[item - n_real].slide;
        MilForward fwd = forward(result.model, slide.features);
        syn_loss += opt.synthetic_loss == LossKind::Gce
                        ? loss_gce(fwd.probs, slide.label, opt.gce_q)
                        : loss_ce(fwd.probs, slide.label);
        MilGradients grads = backward(result.model, slide.features, slide.label,
                                      opt.synthetic_loss, opt.gce_q);
        apply_gradients(result.model, grads,
                        -train_cfg.learning_rate * opt.synthetic_weight);
      }
    }

    LocalEpochStats stats;
    stats.synthetic_active = use_synthetic;
    stats.real_loss = real_loss / static_cast<double>(n_real);
    stats.synthetic_loss = use_synthetic ? syn_loss / static_cast<double>(n_syn) : 0.0;
    int correct = 0;
    for (const auto& slide : client.train)
      if (predict(result.model, slide.features) == slide.label) ++correct;
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(n_real);
    result.history.push_back(stats);
    if (use_synthetic && result.activation_epoch < 0) result.activation_epoch = epoch;

    if (!plateau_fired && opt.curriculum.trigger == CurriculumTrigger::Plateau) {
      if (stats.train_accuracy > best_acc + opt.curriculum.plateau_min_delta) {
        best_acc = stats.train_accuracy;
        epochs_since_improvement = 0;
      } else if (++epochs_since_improvement >= opt.curriculum.plateau_patience) {
        plateau_fired = true;
      }
    }
    if (hook) hook(epoch, result.model);
  }
  return result;
}

}  // namespace

AggregateResult aggregate_and_redistribute(const std::vector<ClientState>& clients) {
  AggregateResult result;
  for (const auto& client : clients) {
    if (client.synthetic.empty())
      result.warnings.push_back("client '" + client.client_id +
                                "' shared no synthetic slides");
    GlobalPool pool;
    pool.client_id = client.client_id;
    result.pools.emplace(client.client_id, std::move(pool));
  }
  for (const auto& origin : clients) {
    for (const auto& slide : origin.synthetic) {
      for (auto& [receiver_id, pool] : result.pools) {
        if (receiver_id == origin.client_id) continue;
        pool.slides.push_back({&slide, origin.client_id});
      }
    }
  }
  return result;
}

LocalTrainResult curriculum_train(const ClientState& client, const GlobalPool& pool,
                                  const TrainConfig& train_cfg,
                                  const CurriculumConfig& cc, RngStream rng,
                                  const EpochHook& hook) {
  MixedTrainOptions opt;
  opt.synthetic_loss = LossKind::Gce;
  opt.synthetic_weight = cc.synthetic_weight;
  opt.gce_q = cc.gce_q;
  opt.active_from_start = false;
  opt.curriculum = cc;
  return mixed_train(client, pool, train_cfg, opt, rng, hook);
}

LocalTrainResult naive_concat_train(const ClientState& client, const GlobalPool& pool,
                                    const TrainConfig& train_cfg, RngStream rng,
                                    const EpochHook& hook) {
  MixedTrainOptions opt;
  opt.synthetic_loss = LossKind::CrossEntropy;
  opt.synthetic_weight = 1.0;
  opt.active_from_start = true;
  return mixed_train(client, pool, train_cfg, opt, rng, hook);
}

std::string arm_name(Arm arm) {
  switch (arm) {
    case Arm::LocalOnly:
      return "local-only";
    case Arm::NaiveConcat:
      return "naive-concat";
    case Arm::FedHd:
      return "fedhd";
  }
  return "unknown";
}

ClientEval evaluate_client(const MilModel& model, const ClientState& client,
                           int class_count) {
  if (client.test.empty())
    throw std::invalid_argument("evaluate: client '" + client.client_id +
                                "' has no test slides");
  std::vector<int> preds, labels;
  std::vector<double> scores;
  preds.reserve(client.test.size());
  for (const auto& slide : client.test) {
    MilForward fwd = forward(model, slide.features);
    Eigen::Index best = 0;
    fwd.probs.maxCoeff(&best);
    preds.push_back(static_cast<int>(best));
    labels.push_back(slide.label);
    if (class_count == 2) scores.push_back(fwd.probs[1]);
  }
  ClientEval eval;
  eval.client_id = client.client_id;
  eval.support = static_cast<int>(client.test.size());
  eval.accuracy = accuracy(preds, labels);
  eval.mcc = mcc(preds, labels, class_count);
  if (class_count == 2) {
    const bool both = std::any_of(labels.begin(), labels.end(), [](int y) { return y == 0; }) &&
                      std::any_of(labels.begin(), labels.end(), [](int y) { return y == 1; });
    if (both) eval.auc = auc(scores, labels);
  }
  return eval;
}

FederationRunResult run_federation(std::vector<ClientState>& clients,
                                   const ProtocolConfig& cfg, std::uint64_t seed) {
  if (clients.empty()) throw std::invalid_argument("run_federation: no clients");
  int class_count = 2;
  for (const auto& c : clients) {
    for (const auto& s : c.train) class_count = std::max(class_count, s.label + 1);
    for (const auto& s : c.test) class_count = std::max(class_count, s.label + 1);
  }

  FederationRunResult result;

  // Phase 1: local distillation.
  for (auto& client : clients) {
    try {
      ClientDistillResult r =
          distill_client(client.train, cfg.distill,
                         mix64(mix64(seed, kDistillSalt), hash64(client.client_id)),
                         cfg.threads);
      client.synthetic = std::move(r.slides);
    } catch (const std::exception& e) {
      throw std::runtime_error("distillation failed for client '" + client.client_id +
                               "': " + e.what());
    }
    ClientPayload payload;
    payload.client_id = client.client_id;
    payload.slides = client.synthetic.size();
    payload.labels = client.synthetic.size();
    for (const auto& s : client.synthetic)
      payload.floats += static_cast<std::uint64_t>(s.features.rows()) *
                        static_cast<std::uint64_t>(s.features.cols());
    payload.mb_f32 = payload_mb_f32(payload.floats);
    result.payload.push_back(payload);
  }

  // Phase 2: the single aggregation round.
  AggregateResult agg = aggregate_and_redistribute(clients);
  result.aggregation_rounds = 1;
  result.warnings = std::move(agg.warnings);

  // Phase 3: local training per arm. All arms of one client share the same
  // stream identity (and therefore the same init and epoch shuffles).
  std::vector<Arm> arms;
  if (cfg.run_local) arms.push_back(Arm::LocalOnly);
  if (cfg.run_naive) arms.push_back(Arm::NaiveConcat);
  if (cfg.run_fedhd) arms.push_back(Arm::FedHd);

  struct Task {
    Arm arm;
    std::size_t client_index;
  };
  std::vector<Task> tasks;
  for (Arm arm : arms)
    for (std::size_t i = 0; i < clients.size(); ++i) tasks.push_back({arm, i});
  std::vector<ClientEval> evals(tasks.size());

  parallel_for(tasks.size(), cfg.threads, [&](std::size_t t) {
    const Task& task = tasks[t];
    const ClientState& client = clients[task.client_index];
    RngStream rng =
        spawn_stream(mix64(seed, kTrainSalt), hash64(client.client_id));
    const GlobalPool empty{client.client_id, {}};
    const GlobalPool& pool = agg.pools.at(client.client_id);
    LocalTrainResult trained;
    switch (task.arm) {
      case Arm::LocalOnly:
        trained = curriculum_train(client, empty, cfg.train, cfg.curriculum, rng);
        break;
      case Arm::NaiveConcat:
        trained = naive_concat_train(client, pool, cfg.train, rng);
        break;
      case Arm::FedHd:
        trained = curriculum_train(client, pool, cfg.train, cfg.curriculum, rng);
        break;
    }
    evals[t] = evaluate_client(trained.model, client, class_count);
  });

  for (Arm arm : arms) {
    std::vector<ClientEval> arm_evals;
    for (std::size_t t = 0; t < tasks.size(); ++t)
      if (tasks[t].arm == arm) arm_evals.push_back(evals[t]);
    result.arms.emplace(arm, summarize(std::move(arm_evals)));
  }
  return result;
}

}  // namespace fedhd

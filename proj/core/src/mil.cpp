#include "fedhd/mil.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace fedhd {
namespace {

constexpr double kProbClamp = 1e-7;

Vector softmax(const Vector& logits) {
  Vector shifted = logits.array() - logits.maxCoeff();
  Vector e = shifted.array().exp();
  return e / e.sum();
}

void check_bag(const MilModel& model, const Matrix& bag) {
  if (bag.rows() == 0) throw std::invalid_argument("mil: empty bag");
  if (bag.cols() != model.input_dim)
    throw std::invalid_argument("mil: bag dimension mismatch");
}

void check_label(const MilModel& model, int label) {
  if (label < 0 || label >= model.class_count)
    throw std::invalid_argument("mil: label out of range");
}

struct GatedActivations {
  Matrix tanh_v;   // K x L
  Matrix sig_u;    // K x L
  Vector attention;  // K
  Vector pooled;     // d
};

GatedActivations gated_pool(const MilModel& model, const Matrix& bag) {
  GatedActivations act;
  act.tanh_v = (bag * model.attn_v.transpose()).array().tanh();
  act.sig_u = (1.0 + (-(bag * model.attn_u.transpose()).array()).exp()).inverse();
  Vector scores = act.tanh_v.cwiseProduct(act.sig_u) * model.attn_w;
  act.attention = softmax(scores);
  act.pooled = bag.transpose() * act.attention;
  return act;
}

}  // namespace

Eigen::Index MilModel::parameter_count() const {
  Eigen::Index n = classifier_w.size() + classifier_b.size();
  if (variant == MilVariant::GatedAttention)
    n += attn_v.size() + attn_u.size() + attn_w.size();
  return n;
}

Vector MilModel::flatten() const {
  Vector out(parameter_count());
  Eigen::Index at = 0;
  auto put = [&](const double* data, Eigen::Index n) {
    std::memcpy(out.data() + at, data, sizeof(double) * static_cast<std::size_t>(n));
    at += n;
  };
  put(classifier_w.data(), classifier_w.size());
  put(classifier_b.data(), classifier_b.size());
  if (variant == MilVariant::GatedAttention) {
    put(attn_v.data(), attn_v.size());
    put(attn_u.data(), attn_u.size());
    put(attn_w.data(), attn_w.size());
  }
  return out;
}

void MilModel::unflatten(const Vector& params) {
  if (params.size() != parameter_count())
    throw std::invalid_argument("mil: flat parameter size mismatch");
  Eigen::Index at = 0;
  auto take = [&](double* data, Eigen::Index n) {
    std::memcpy(data, params.data() + at, sizeof(double) * static_cast<std::size_t>(n));
    at += n;
  };
  take(classifier_w.data(), classifier_w.size());
  take(classifier_b.data(), classifier_b.size());
  if (variant == MilVariant::GatedAttention) {
    take(attn_v.data(), attn_v.size());
    take(attn_u.data(), attn_u.size());
    take(attn_w.data(), attn_w.size());
  }
}

MilModel make_mil_model(MilVariant variant, int input_dim, int class_count,
                        int hidden_dim, RngStream& rng) {
  if (input_dim < 1 || class_count < 2)
    throw std::invalid_argument("mil: bad model dimensions");
  MilModel model;
  model.variant = variant;
  model.input_dim = input_dim;
  model.class_count = class_count;
  model.hidden_dim = variant == MilVariant::GatedAttention ? hidden_dim : 0;
  const double std_d = 1.0 / std::sqrt(static_cast<double>(input_dim));
  model.classifier_w = rng.normal_matrix(class_count, input_dim) * std_d;
  model.classifier_b = Vector::Zero(class_count);
  if (variant == MilVariant::GatedAttention) {
    if (hidden_dim < 1) throw std::invalid_argument("mil: hidden_dim must be >= 1");
    model.attn_v = rng.normal_matrix(hidden_dim, input_dim) * std_d;
    model.attn_u = rng.normal_matrix(hidden_dim, input_dim) * std_d;
    model.attn_w = rng.normal_vector(hidden_dim) / std::sqrt(static_cast<double>(hidden_dim));
  }
  return model;
}

MilForward forward(const MilModel& model, const Matrix& bag) {
  check_bag(model, bag);
  MilForward out;
  Vector pooled;
  if (model.variant == MilVariant::MeanPool) {
    pooled = bag.colwise().mean().transpose();
  } else {
    GatedActivations act = gated_pool(model, bag);
    pooled = act.pooled;
    out.attention = std::move(act.attention);
  }
  out.probs = softmax(model.classifier_w * pooled + model.classifier_b);
  return out;
}

double loss_ce(const Vector& probs, int label) {
  if (label < 0 || label >= probs.size())
    throw std::invalid_argument("mil: label out of range");
  return -std::log(std::max(probs[label], kProbClamp));
}

double loss_gce(const Vector& probs, int label, double q) {
  if (label < 0 || label >= probs.size())
    throw std::invalid_argument("mil: label out of range");
  if (q <= 0.0 || q > 1.0)
    throw std::invalid_argument("mil: q must be in (0, 1]");
  const double p = std::max(probs[label], kProbClamp);
  return (1.0 - std::pow(p, q)) / q;
}

MilGradients backward(const MilModel& model, const Matrix& bag, int label,
                      LossKind loss, double q) {
  check_bag(model, bag);
  check_label(model, label);

  MilGradients grads;
  Vector pooled;
  GatedActivations act;
  if (model.variant == MilVariant::MeanPool) {
    pooled = bag.colwise().mean().transpose();
  } else {
    act = gated_pool(model, bag);
    pooled = act.pooled;
  }
  Vector probs = softmax(model.classifier_w * pooled + model.classifier_b);

  // d loss / d logits. CE: p - onehot(y). GCE: p_y^q (p - onehot(y)).
  // Below the clamp the loss is flat in p_y, so the gradient vanishes.
  Vector dlogits;
  const double p_y = probs[label];
  if (p_y <= kProbClamp) {
    dlogits = Vector::Zero(model.class_count);
  } else {
    dlogits = probs;
    dlogits[label] -= 1.0;
    if (loss == LossKind::Gce) {
      if (q <= 0.0 || q > 1.0) throw std::invalid_argument("mil: q must be in (0, 1]");
      dlogits *= std::pow(p_y, q);
    }
  }

  grads.classifier_w = dlogits * pooled.transpose();
  grads.classifier_b = dlogits;

  if (model.variant == MilVariant::GatedAttention) {
    Vector dpooled = model.classifier_w.transpose() * dlogits;
    Vector dattn = bag * dpooled;                       // K
    const double dot = act.attention.dot(dattn);
    Vector dscore =
        (act.attention.array() * (dattn.array() - dot)).matrix();  // softmax backward
    Matrix gated = act.tanh_v.cwiseProduct(act.sig_u);  // K x L
    grads.attn_w = gated.transpose() * dscore;
    Matrix dtanh =
        (dscore * model.attn_w.transpose()).cwiseProduct(act.sig_u).cwiseProduct(
            (1.0 - act.tanh_v.array().square()).matrix());
    Matrix dsig =
        (dscore * model.attn_w.transpose()).cwiseProduct(act.tanh_v).cwiseProduct(
            (act.sig_u.array() * (1.0 - act.sig_u.array())).matrix());
    grads.attn_v = dtanh.transpose() * bag;
    grads.attn_u = dsig.transpose() * bag;
  }
  return grads;
}

Vector MilGradients::flatten() const {
  Eigen::Index n = classifier_w.size() + classifier_b.size() + attn_v.size() +
                   attn_u.size() + attn_w.size();
  Vector out(n);
  Eigen::Index at = 0;
  auto put = [&](const double* data, Eigen::Index count) {
    std::memcpy(out.data() + at, data, sizeof(double) * static_cast<std::size_t>(count));
    at += count;
  };
  put(classifier_w.data(), classifier_w.size());
  put(classifier_b.data(), classifier_b.size());
  put(attn_v.data(), attn_v.size());
  put(attn_u.data(), attn_u.size());
  put(attn_w.data(), attn_w.size());
  return out;
}

void apply_gradients(MilModel& model, const MilGradients& grads, double scale) {
  model.classifier_w += scale * grads.classifier_w;
  model.classifier_b += scale * grads.classifier_b;
  if (model.variant == MilVariant::GatedAttention) {
    model.attn_v += scale * grads.attn_v;
    model.attn_u += scale * grads.attn_u;
    model.attn_w += scale * grads.attn_w;
  }
}

TrainHistory train(MilModel& model, const std::vector<BagView>& bags,
                   const TrainConfig& cfg, RngStream& rng) {
  if (bags.empty()) throw std::invalid_argument("mil: empty training set");
  if (cfg.epochs < 1) throw std::invalid_argument("mil: epochs must be >= 1");
  TrainHistory history;
  history.epochs.reserve(static_cast<std::size_t>(cfg.epochs));
  std::vector<std::size_t> order(bags.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream erng = rng.fork(static_cast<std::uint64_t>(epoch));
    erng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const BagView& bag = bags[idx];
      MilForward fwd = forward(model, *bag.features);
      loss_sum += cfg.loss == LossKind::Gce ? loss_gce(fwd.probs, bag.label, cfg.gce_q)
                                            : loss_ce(fwd.probs, bag.label);
      MilGradients grads = backward(model, *bag.features, bag.label, cfg.loss, cfg.gce_q);
      apply_gradients(model, grads, -cfg.learning_rate);
    }
    EpochStats stats;
    stats.mean_loss = loss_sum / static_cast<double>(bags.size());
    int correct = 0;
    for (const BagView& bag : bags)
      if (predict(model, *bag.features) == bag.label) ++correct;
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(bags.size());
    history.epochs.push_back(stats);
  }
  return history;
}

int predict(const MilModel& model, const Matrix& bag) {
  MilForward fwd = forward(model, bag);
  Eigen::Index best = 0;
  fwd.probs.maxCoeff(&best);
  return static_cast<int>(best);
}

namespace {

constexpr char kMilMagic[4] = {'F', 'M', 'I', 'L'};

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("mil: truncated model stream");
  return value;
}

}  // namespace

void save_mil(std::ostream& out, const MilModel& model) {
  out.write(kMilMagic, 4);
  write_pod<std::uint16_t>(out, 1);
  write_pod<std::uint16_t>(out, model.variant == MilVariant::MeanPool ? 0 : 1);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_dim));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.hidden_dim));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.class_count));
  Vector flat = model.flatten();
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(sizeof(double)) * flat.size());
  if (!out) throw std::runtime_error("mil: write failed");
}

MilModel load_mil(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMilMagic, 4) != 0)
    throw std::runtime_error("mil: bad magic");
  if (read_pod<std::uint16_t>(in) != 1)
    throw std::runtime_error("mil: unsupported version");
  const auto variant = read_pod<std::uint16_t>(in);
  MilModel model;
  model.variant = variant == 0 ? MilVariant::MeanPool : MilVariant::GatedAttention;
  model.input_dim = static_cast<int>(read_pod<std::uint32_t>(in));
  model.hidden_dim = static_cast<int>(read_pod<std::uint32_t>(in));
  model.class_count = static_cast<int>(read_pod<std::uint32_t>(in));
  model.classifier_w.resize(model.class_count, model.input_dim);
  model.classifier_b.resize(model.class_count);
  if (model.variant == MilVariant::GatedAttention) {
    model.attn_v.resize(model.hidden_dim, model.input_dim);
    model.attn_u.resize(model.hidden_dim, model.input_dim);
    model.attn_w.resize(model.hidden_dim);
  }
  Vector flat(model.parameter_count());
  in.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(sizeof(double)) * flat.size());
  if (!in) throw std::runtime_error("mil: truncated model stream");
  model.unflatten(flat);
  return model;
}

void save_mil(const std::string& path, const MilModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("mil: cannot open " + path);
  save_mil(out, model);
}

MilModel load_mil(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("mil: cannot open " + path);
  return load_mil(in);
}

}  // namespace fedhd

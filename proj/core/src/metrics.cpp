#include "fedhd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedhd {

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  if (preds.empty() || preds.size() != labels.size())
    throw std::invalid_argument("accuracy: empty or mismatched inputs");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double mcc(std::span<const int> preds, std::span<const int> labels, int class_count) {
  if (preds.empty() || preds.size() != labels.size())
    throw std::invalid_argument("mcc: empty or mismatched inputs");
  if (class_count < 2) throw std::invalid_argument("mcc: class_count must be >= 2");
  std::vector<double> confusion(
      static_cast<std::size_t>(class_count) * static_cast<std::size_t>(class_count), 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= class_count || labels[i] < 0 || labels[i] >= class_count)
      throw std::invalid_argument("mcc: class index out of range");
    confusion[static_cast<std::size_t>(labels[i]) * class_count + preds[i]] += 1.0;
  }
  const double s = static_cast<double>(preds.size());
  double correct = 0.0, tp_sum = 0.0, t_sq = 0.0, p_sq = 0.0;
  for (int k = 0; k < class_count; ++k) {
    correct += confusion[static_cast<std::size_t>(k) * class_count + k];
    double t_k = 0.0, p_k = 0.0;
    for (int j = 0; j < class_count; ++j) {
      t_k += confusion[static_cast<std::size_t>(k) * class_count + j];
      p_k += confusion[static_cast<std::size_t>(j) * class_count + k];
    }
    tp_sum += t_k * p_k;
    t_sq += t_k * t_k;
    p_sq += p_k * p_k;
  }
  const double denom = std::sqrt(s * s - p_sq) * std::sqrt(s * s - t_sq);
  if (denom == 0.0) return 0.0;
  return (correct * s - tp_sum) / denom;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw std::invalid_argument("auc: empty or mismatched inputs");
  std::size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("auc: labels must be binary");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("AUC undefined: single-class input");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks within tie groups, 1-based.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double weighted_average(std::span<const double> values, std::span<const double> weights) {
  if (values.empty() || values.size() != weights.size())
    throw std::invalid_argument("weighted_average: empty or mismatched inputs");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (weights[i] <= 0.0)
      throw std::invalid_argument("weighted_average: weights must be positive");
    num += weights[i] * values[i];
    den += weights[i];
  }
  return num / den;
}

EvalResult summarize(std::vector<ClientEval> clients) {
  EvalResult result;
  std::vector<double> accs, mccs, aucs, weights;
  bool all_have_auc = !clients.empty();
  for (const auto& c : clients) {
    accs.push_back(c.accuracy);
    mccs.push_back(c.mcc);
    weights.push_back(static_cast<double>(c.support));
    if (c.auc)
      aucs.push_back(*c.auc);
    else
      all_have_auc = false;
  }
  result.weighted_accuracy = weighted_average(accs, weights);
  result.weighted_mcc = weighted_average(mccs, weights);
  if (all_have_auc) result.weighted_auc = weighted_average(aucs, weights);
  result.clients = std::move(clients);
  return result;
}

}  // namespace fedhd

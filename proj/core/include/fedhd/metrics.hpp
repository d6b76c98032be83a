#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedhd {

// Fraction of exact matches.
double accuracy(std::span<const int> preds, std::span<const int> labels);

// Matthews correlation coefficient, multiclass (Gorodkin) form. Reduces to
// the classical binary formula for class_count = 2; returns 0 when a
// denominator term is zero.
double mcc(std::span<const int> preds, std::span<const int> labels, int class_count);

// Probability that a random positive outranks a random negative, ties
// counted 1/2 (rank / Mann-Whitney form). Throws "AUC undefined" when only
// one class is present.
double auc(std::span<const double> scores, std::span<const int> labels);

// sum(w_c m_c) / sum(w_c)
double weighted_average(std::span<const double> values, std::span<const double> weights);

struct ClientEval {
  std::string client_id;
  double accuracy = 0.0;
  double mcc = 0.0;
  std::optional<double> auc;  // binary tasks only
  int support = 0;            // test slide count
};

struct EvalResult {
  std::vector<ClientEval> clients;
  double weighted_accuracy = 0.0;
  double weighted_mcc = 0.0;
  std::optional<double> weighted_auc;
};

EvalResult summarize(std::vector<ClientEval> clients);

}  // namespace fedhd

#pragma once

// Task objectives: cross-entropy for the two classification heads, a
// discrete-time hazard likelihood for survival, and the combined objective
// that folds in the two per-stream consistency terms.

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "subfuse/data.hpp"
#include "subfuse/errors.hpp"
#include "subfuse/ops.hpp"

namespace subfuse {

enum class Task { diagnosis, grading, survival };

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::diagnosis: return "diagnosis";
    case Task::grading: return "grading";
    case Task::survival: return "survival";
  }
  throw contract_error("task_name: unknown task");
}

inline Task parse_task(std::string_view s) {
  if (s == "diagnosis") return Task::diagnosis;
  if (s == "grading") return Task::grading;
  if (s == "survival") return Task::survival;
  throw config_error("unknown task '" + std::string(s) + "' (expected diagnosis|grading|survival)");
}

struct LossWeights {
  double alpha = 0.5;  // weight on the tumour-stream consistency term

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw config_error("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
};

namespace detail {

inline void check_labels(const Tensor& logits, const std::vector<int>& labels, const char* who) {
  if (logits.rank() != 2)
    throw dim_error(std::string(who) + ": expected rank-2 logits, got " + shape_str(logits.shape()));
  if (labels.size() != logits.dim(0))
    throw contract_error(std::string(who) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.dim(0)) + " rows");
  const int k = static_cast<int>(logits.dim(1));
  for (std::size_t b = 0; b < labels.size(); ++b)
    if (labels[b] < 0 || labels[b] >= k)
      throw contract_error(std::string(who) + ": label " + std::to_string(labels[b]) +
                           " out of range [0, " + std::to_string(k) + ") at row " + std::to_string(b));
}

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// Mean over the batch of -log softmax(logits)[label], evaluated through the
// log-sum-exp form so saturated logits stay finite.
inline Tensor ce_loss(const Tensor& logits, const std::vector<int>& labels) {
  detail::check_labels(logits, labels, "ce_loss");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  const std::vector<double>& x = logits.values();
  std::vector<double> probs(b * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = x.data() + i * k;
    const double m = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - m);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - m) / sum;
    loss += m + std::log(sum) - row[static_cast<std::size_t>(labels[i])];
  }
  loss /= static_cast<double>(b);
  return make_op("ce_loss", {}, {loss}, {logits},
                 [b, k, labels, probs = std::move(probs)](TensorNode& nd) {
                   TensorNode& p = *nd.parents[0];
                   if (!p.requires_grad) return;
                   p.ensure_grad();
                   const double g = nd.grad[0] / static_cast<double>(b);
                   for (std::size_t i = 0; i < b; ++i)
                     for (std::size_t j = 0; j < k; ++j) {
                       const double onehot = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
                       p.grad[i * k + j] += g * (probs[i * k + j] - onehot);
                     }
                 });
}

// Discrete-time hazard likelihood over kSurvivalBins intervals.  With hazards
// h_j = sigmoid(logit_j) and survival S_j = prod_{m<=j}(1-h_m), an observed
// event in bin j contributes -log S_{j-1} - log h_j and a censored sample
// -log S_j.  Both reduce to sums of softplus terms, which keeps saturated
// logits finite.
inline Tensor nll_survival_loss(const Tensor& hazard_logits, const std::vector<SurvivalRecord>& records) {
  if (hazard_logits.rank() != 2 || hazard_logits.dim(1) != kSurvivalBins)
    throw dim_error("nll_survival_loss: expected [B x " + std::to_string(kSurvivalBins) +
                    "] logits, got " + shape_str(hazard_logits.shape()));
  const std::size_t b = hazard_logits.dim(0);
  if (records.size() != b)
    throw contract_error("nll_survival_loss: " + std::to_string(records.size()) + " records for " +
                         std::to_string(b) + " rows");
  for (const SurvivalRecord& r : records)
    if (r.bin < 0 || r.bin >= static_cast<int>(kSurvivalBins))
      throw contract_error("nll_survival_loss: bin " + std::to_string(r.bin) + " out of range");

  const std::vector<double>& x = hazard_logits.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = x.data() + i * kSurvivalBins;
    const std::size_t j = static_cast<std::size_t>(records[i].bin);
    if (records[i].event) {
      for (std::size_t m = 0; m < j; ++m) loss += detail::softplus(row[m]);  // -log(1-h_m)
      loss += detail::softplus(-row[j]);                                     // -log h_j
    } else {
      for (std::size_t m = 0; m <= j; ++m) loss += detail::softplus(row[m]);  // -log S_j
    }
  }
  loss /= static_cast<double>(b);
  return make_op("nll_survival_loss", {}, {loss}, {hazard_logits}, [b, records, x](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double g = nd.grad[0] / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      const double* row = x.data() + i * kSurvivalBins;
      double* grow = p.grad.data() + i * kSurvivalBins;
      const std::size_t j = static_cast<std::size_t>(records[i].bin);
      if (records[i].event) {
        for (std::size_t m = 0; m < j; ++m) grow[m] += g * detail::sigmoid_stable(row[m]);
        grow[j] += g * (detail::sigmoid_stable(row[j]) - 1.0);
      } else {
        for (std::size_t m = 0; m <= j; ++m) grow[m] += g * detail::sigmoid_stable(row[m]);
      }
    }
  });
}

// task_loss + alpha * consistency_t + (1 - alpha) * consistency_e.  The task
// tag only selects which head produced task_loss; the combination rule is the
// same for all three.
inline Tensor total_loss(Task, const Tensor& task_loss, const Tensor& consistency_t,
                         const Tensor& consistency_e, const LossWeights& w) {
  w.validate();
  if (task_loss.size() != 1 || consistency_t.size() != 1 || consistency_e.size() != 1)
    throw dim_error("total_loss: all inputs must be scalars");
  return add(task_loss, add(scale(consistency_t, w.alpha), scale(consistency_e, 1.0 - w.alpha)));
}

}  // namespace subfuse

#pragma once

// Evaluation metrics: macro one-vs-rest AUC, accuracy, sensitivity,
// specificity, F1 for the classification heads, and the concordance index
// for survival.  A MetricReport row serializes to
// `epoch,split,auc,acc,sen,spec,f1,cindex` with fields that do not apply to
// the task left empty.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "subfuse/data.hpp"
#include "subfuse/errors.hpp"
#include "subfuse/io_util.hpp"
#include "subfuse/tensor.hpp"

namespace subfuse {

struct MetricReport {
  std::optional<double> auc, acc, sen, spec, f1, c_index;

  static std::string csv_header() { return "epoch,split,auc,acc,sen,spec,f1,cindex"; }

  std::string csv_row(std::size_t epoch, std::string_view split) const {
    auto cell = [](const std::optional<double>& v) {
      return v ? detail::fmt_double(*v) : std::string();
    };
    std::string row = std::to_string(epoch);
    row += ',';
    row += split;
    for (const auto* v : {&auc, &acc, &sen, &spec, &f1, &c_index}) {
      row += ',';
      row += cell(*v);
    }
    return row;
  }
};

// Concordance over comparable pairs (i observed, time_i < time_j): a pair
// counts 1 when the earlier event has the higher risk, 0.5 on a risk tie.
// With no comparable pair the index is the uninformative 0.5.
inline double c_index(const std::vector<double>& risks, const std::vector<SurvivalRecord>& records) {
  if (risks.size() != records.size())
    throw contract_error("c_index: " + std::to_string(risks.size()) + " risks for " +
                         std::to_string(records.size()) + " records");
  if (risks.size() < 2) throw contract_error("c_index: need at least 2 samples");
  double concordant = 0.0;
  std::size_t comparable = 0;
  for (std::size_t i = 0; i < risks.size(); ++i) {
    if (!records[i].event) continue;
    for (std::size_t j = 0; j < risks.size(); ++j) {
      if (j == i || !(records[i].time < records[j].time)) continue;
      ++comparable;
      if (risks[i] > risks[j])
        concordant += 1.0;
      else if (risks[i] == risks[j])
        concordant += 0.5;
    }
  }
  if (comparable == 0) return 0.5;
  return concordant / static_cast<double>(comparable);
}

// Event risk implied by the hazard head: 1 - S_last, the probability of an
// event inside the modelled horizon.  Any strictly increasing transform gives
// the same ranking, so the concordance index does not depend on this choice.
inline std::vector<double> survival_risks(const Tensor& hazard_logits) {
  if (hazard_logits.rank() != 2 || hazard_logits.dim(1) != kSurvivalBins)
    throw dim_error("survival_risks: expected [B x " + std::to_string(kSurvivalBins) +
                    "] logits, got " + shape_str(hazard_logits.shape()));
  const std::size_t b = hazard_logits.dim(0);
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    double surv = 1.0;
    for (std::size_t j = 0; j < kSurvivalBins; ++j) {
      const double x = hazard_logits.values()[i * kSurvivalBins + j];
      const double h = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      surv *= 1.0 - h;
    }
    out[i] = 1.0 - surv;
  }
  return out;
}

namespace detail {

// Trapezoidal ROC area via the rank-sum identity; tied scores get midranks,
// which is exactly the trapezoid through each tie block.
inline double ovr_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t pos = 0, i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) {
        rank_sum_pos += midrank;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = n - pos;
  return (rank_sum_pos - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1)) /
         (static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace detail

// Macro-averaged one-vs-rest metrics over probability rows.  Per-class ratios
// whose denominator is empty (a class with no positives or no negatives) are
// left out of their macro average.
inline MetricReport classification_metrics(const std::vector<double>& probs, std::size_t classes,
                                           const std::vector<int>& labels) {
  const std::size_t b = labels.size();
  if (classes < 2) throw contract_error("classification_metrics: need at least 2 classes");
  if (b == 0) throw contract_error("classification_metrics: empty batch");
  if (probs.size() != b * classes)
    throw contract_error("classification_metrics: " + std::to_string(probs.size()) +
                         " probabilities for " + std::to_string(b) + "x" +
                         std::to_string(classes));
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || labels[i] >= static_cast<int>(classes))
      throw contract_error("classification_metrics: label out of range at row " + std::to_string(i));
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) sum += probs[i * classes + k];
    if (std::abs(sum - 1.0) > 1e-6)
      throw contract_error("classification_metrics: row " + std::to_string(i) +
                           " sums to " + std::to_string(sum));
  }

  std::vector<std::size_t> predicted(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = probs.data() + i * classes;
    predicted[i] = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
  }

  double auc_sum = 0.0, sen_sum = 0.0, spec_sum = 0.0, f1_sum = 0.0;
  std::size_t auc_n = 0, sen_n = 0, spec_n = 0, f1_n = 0, correct = 0;
  for (std::size_t i = 0; i < b; ++i)
    if (predicted[i] == static_cast<std::size_t>(labels[i])) ++correct;

  for (std::size_t k = 0; k < classes; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::vector<double> scores(b);
    std::vector<bool> positive(b);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < b; ++i) {
      scores[i] = probs[i * classes + k];
      positive[i] = labels[i] == static_cast<int>(k);
      pos += positive[i];
      const bool pred_k = predicted[i] == k;
      if (positive[i] && pred_k) ++tp;
      if (positive[i] && !pred_k) ++fn;
      if (!positive[i] && pred_k) ++fp;
      if (!positive[i] && !pred_k) ++tn;
    }
    const std::size_t neg = b - pos;
    if (pos > 0 && neg > 0) {
      auc_sum += detail::ovr_auc(scores, positive);
      ++auc_n;
    }
    if (pos > 0) {
      sen_sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
      ++sen_n;
    }
    if (neg > 0) {
      spec_sum += static_cast<double>(tn) / static_cast<double>(tn + fp);
      ++spec_n;
    }
    if (2 * tp + fp + fn > 0) {
      f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
      ++f1_n;
    }
  }
  if (auc_n == 0)
    throw contract_error("classification_metrics: AUC undefined, labels contain a single class");

  MetricReport r;
  r.auc = auc_sum / static_cast<double>(auc_n);
  r.acc = static_cast<double>(correct) / static_cast<double>(b);
  r.sen = sen_n ? std::optional<double>(sen_sum / static_cast<double>(sen_n)) : std::nullopt;
  r.spec = spec_n ? std::optional<double>(spec_sum / static_cast<double>(spec_n)) : std::nullopt;
  r.f1 = f1_n ? std::optional<double>(f1_sum / static_cast<double>(f1_n)) : std::nullopt;
  return r;
}

}  // namespace subfuse

#pragma once

// Confidence-guided coordination of the two subspace gradients on the shared
// classifier: when the branch gradients point against each other (negative
// cosine), the branch whose batch confidence is lower is projected onto the
// perpendicular of the other; everything else passes through untouched.

#include <cmath>
#include <string>
#include <vector>

#include "subfuse/data.hpp"
#include "subfuse/errors.hpp"
#include "subfuse/metrics.hpp"
#include "subfuse/ops.hpp"

namespace subfuse {

// Flattened per-branch gradients over the shared classifier parameters, plus
// each branch's scalar batch confidence.
struct BranchGradients {
  std::vector<double> grad_t;
  std::vector<double> grad_e;
  double conf_t = 0.0;
  double conf_e = 0.0;
};

struct CoordResult {
  std::vector<double> grad_t;
  std::vector<double> grad_e;
  bool applied = false;
};

// Sum over the batch of the probability the branch assigns to each true label.
inline double branch_confidence_cls(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw dim_error("branch_confidence_cls: expected rank-2 logits, got " + shape_str(logits.shape()));
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b)
    throw contract_error("branch_confidence_cls: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(b) + " rows");
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || labels[i] >= static_cast<int>(k))
      throw contract_error("branch_confidence_cls: label " + std::to_string(labels[i]) +
                           " out of range at row " + std::to_string(i));
    const double* row = logits.values().data() + i * k;
    const double m = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - m);
    total += std::exp(row[static_cast<std::size_t>(labels[i])] - m) / sum;
  }
  return total;
}

// Branch confidence for survival is its mini-batch concordance index.
inline double branch_confidence_surv(const std::vector<double>& risks,
                                     const std::vector<SurvivalRecord>& records) {
  return c_index(risks, records);
}

// Component of x1 perpendicular to x2.  A zero x2 leaves x1 unchanged: there
// is no direction to project away from.
inline std::vector<double> project_perpendicular(const std::vector<double>& x1,
                                                 const std::vector<double>& x2) {
  if (x1.size() != x2.size())
    throw contract_error("project_perpendicular: length mismatch " + std::to_string(x1.size()) +
                         " vs " + std::to_string(x2.size()));
  double dot = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    dot += x1[i] * x2[i];
    nn += x2[i] * x2[i];
  }
  if (nn == 0.0) return x1;
  const double coef = dot / nn;
  std::vector<double> out(x1.size());
  for (std::size_t i = 0; i < x1.size(); ++i) out[i] = x1[i] - coef * x2[i];
  return out;
}

// At most one branch is adjusted, and only when the gradients genuinely
// conflict and one branch is strictly more confident.  A zero gradient on
// either side gives cosine 0 and passes through.
inline CoordResult coordinate(const BranchGradients& bg) {
  if (bg.grad_t.size() != bg.grad_e.size())
    throw contract_error("coordinate: gradient length mismatch " + std::to_string(bg.grad_t.size()) +
                         " vs " + std::to_string(bg.grad_e.size()));
  CoordResult r{bg.grad_t, bg.grad_e, false};
  if (cosine_similarity(bg.grad_t, bg.grad_e) >= 0.0) return r;
  if (bg.conf_t == bg.conf_e) return r;
  if (bg.conf_t < bg.conf_e)
    r.grad_t = project_perpendicular(bg.grad_t, bg.grad_e);
  else
    r.grad_e = project_perpendicular(bg.grad_e, bg.grad_t);
  r.applied = true;
  return r;
}

}  // namespace subfuse

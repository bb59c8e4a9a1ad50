#pragma once

// Central finite-difference gradient checking. Kept independent of the
// library's backward pass: only forward evaluation is reused.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <subfuse/tensor.hpp>

namespace testsupport {

// Max mismatch between analytic gradients of make_loss w.r.t. the given
// leaves and central differences with step h. Error is |a - n| divided by
// max(1, |a|, |n|). Leaves must be params the closure re-reads each call.
inline double finite_diff_max_err(const std::vector<subfuse::Tensor>& leaves,
                                  const std::function<subfuse::Tensor()>& make_loss,
                                  double h = 1e-6) {
  using subfuse::Tensor;
  subfuse::GradMap g = subfuse::backward(make_loss());
  double worst = 0.0;
  for (Tensor leaf : leaves) {
    const std::vector<double> analytic = g.grad_values(leaf);
    auto& vals = leaf.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double up = make_loss().item();
      vals[i] = orig - h;
      const double dn = make_loss().item();
      vals[i] = orig;
      const double numeric = (up - dn) / (2.0 * h);
      const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
  }
  return worst;
}

// Same check at a random subset of coordinates: cheap enough to repeat over
// many random configurations of expensive composites.
inline double finite_diff_sampled_err(const std::vector<subfuse::Tensor>& leaves,
                                      const std::function<subfuse::Tensor()>& make_loss,
                                      std::mt19937_64& rng, std::size_t probes, double h = 1e-6) {
  using subfuse::Tensor;
  subfuse::GradMap g = subfuse::backward(make_loss());
  double worst = 0.0;
  std::uniform_int_distribution<std::size_t> pick_leaf(0, leaves.size() - 1);
  for (std::size_t t = 0; t < probes; ++t) {
    Tensor leaf = leaves[pick_leaf(rng)];
    std::uniform_int_distribution<std::size_t> pick_idx(0, leaf.size() - 1);
    const std::size_t i = pick_idx(rng);
    const double analytic = g.grad_values(leaf)[i];
    auto& vals = leaf.mutable_values();
    const double orig = vals[i];
    vals[i] = orig + h;
    const double up = make_loss().item();
    vals[i] = orig - h;
    const double dn = make_loss().item();
    vals[i] = orig;
    const double numeric = (up - dn) / (2.0 * h);
    const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
    worst = std::max(worst, std::abs(numeric - analytic) / denom);
  }
  return worst;
}

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -2.0,
                                         double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline subfuse::Tensor random_param(subfuse::Shape s, std::mt19937_64& rng, double lo = -2.0,
                                    double hi = 2.0) {
  std::vector<double> v = random_values(subfuse::numel(s), rng, lo, hi);
  return subfuse::Tensor::param(std::move(v), std::move(s));
}

inline subfuse::Tensor random_constant(subfuse::Shape s, std::mt19937_64& rng, double lo = -2.0,
                                       double hi = 2.0) {
  std::vector<double> v = random_values(subfuse::numel(s), rng, lo, hi);
  return subfuse::Tensor::constant(std::move(v), std::move(s));
}

}  // namespace testsupport

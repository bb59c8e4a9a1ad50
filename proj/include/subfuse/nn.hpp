#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "subfuse/ops.hpp"
#include "subfuse/sampling.hpp"
#include "subfuse/tensor.hpp"

namespace subfuse {

using Rng = std::mt19937_64;

// Derives an independent deterministic stream, so e.g. data order does not
// change when the parameter init draws change.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

// LeCun-normal draws: variance 1/fan_in, the init the self-normalizing
// recipe expects.
inline std::vector<double> lecun_normal(std::size_t count, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  std::vector<double> v(count);
  for (double& x : v) x = dist(rng);
  return v;
}

// Ordered collection of named parameter leaves. Registration order is the
// canonical order for checkpoints and flattened gradient vectors.
class ParamRegistry {
 public:
  void add(std::string path, Tensor p) {
    for (const auto& [k, _] : items_)
      if (k == path) throw contract_error("ParamRegistry: duplicate path " + path);
    items_.emplace_back(std::move(path), std::move(p));
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  const Tensor* find(const std::string& path) const {
    for (const auto& [k, t] : items_)
      if (k == path) return &t;
    return nullptr;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.size();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct LinearLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static LinearLayer init(std::size_t in, std::size_t out, Rng& rng) {
    LinearLayer l;
    l.weight = Tensor::param(lecun_normal(in * out, in, rng), {in, out});
    l.bias = Tensor::param(std::vector<double>(out, 0.0), {out});
    return l;
  }

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }

  void register_params(ParamRegistry& reg, const std::string& prefix) const {
    reg.add(prefix + "/weight", weight);
    reg.add(prefix + "/bias", bias);
  }
};

struct Conv2dLayer {
  Tensor kernel;  // [kh x kw x ci x co]
  Tensor bias;    // [co]

  static Conv2dLayer init(std::size_t kh, std::size_t kw, std::size_t ci, std::size_t co, Rng& rng) {
    Conv2dLayer l;
    l.kernel = Tensor::param(lecun_normal(kh * kw * ci * co, kh * kw * ci, rng), {kh, kw, ci, co});
    l.bias = Tensor::param(std::vector<double>(co, 0.0), {co});
    return l;
  }

  // All-zero layer: the offset head starts here so training begins from the
  // identity deformation.
  static Conv2dLayer zero(std::size_t kh, std::size_t kw, std::size_t ci, std::size_t co) {
    Conv2dLayer l;
    l.kernel = Tensor::param(std::vector<double>(kh * kw * ci * co, 0.0), {kh, kw, ci, co});
    l.bias = Tensor::param(std::vector<double>(co, 0.0), {co});
    return l;
  }

  Tensor operator()(const Tensor& x) const { return conv2d_same(x, kernel, bias); }

  void register_params(ParamRegistry& reg, const std::string& prefix) const {
    reg.add(prefix + "/kernel", kernel);
    reg.add(prefix + "/bias", bias);
  }
};

}  // namespace subfuse

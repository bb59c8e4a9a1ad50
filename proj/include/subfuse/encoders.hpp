#pragma once

// Modality encoders: a self-normalizing feed-forward stack for gene
// subspaces and a per-cell linear projector for histology grids.

#include <cstddef>
#include <string>
#include <vector>

#include "subfuse/errors.hpp"
#include "subfuse/nn.hpp"
#include "subfuse/ops.hpp"

namespace subfuse {

// Gathers columns of a B x G matrix in the given order.
inline Tensor select_columns(const Tensor& x, const std::vector<std::size_t>& cols) {
  if (x.rank() != 2) throw dim_error("select_columns: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), g = x.dim(1), d = cols.size();
  for (std::size_t j : cols)
    if (j >= g) throw dim_error("select_columns: column " + std::to_string(j) + " out of range");
  std::vector<double> out(b * d);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.values()[i * g + cols[j]];
  return make_op("select_columns", {b, d}, std::move(out), {x}, [b, g, cols](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const std::size_t d = cols.size();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) p.grad[i * g + cols[j]] += nd.grad[i * d + j];
  });
}

// Two linear layers with SELU after each; hidden width fixed at init.
// Inputs are the selected subspace columns of a gene matrix.
struct GenomicEncoder {
  LinearLayer l1, l2;

  static GenomicEncoder init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    if (in == 0) throw config_error("genomic encoder: empty input subspace");
    GenomicEncoder e;
    e.l1 = LinearLayer::init(in, hidden, rng);
    e.l2 = LinearLayer::init(hidden, out, rng);
    return e;
  }

  Tensor operator()(const Tensor& x) const { return selu(l2(selu(l1(x)))); }

  // Selects the subspace columns, then encodes.
  Tensor encode(const Tensor& genes, const std::vector<std::size_t>& cols) const {
    if (cols.empty()) throw config_error("genomic encoder: empty subspace selection");
    if (cols.size() != l1.weight.dim(0))
      throw dim_error("genomic encoder: subspace has " + std::to_string(cols.size()) +
                      " genes, encoder expects " + std::to_string(l1.weight.dim(0)));
    return (*this)(select_columns(genes, cols));
  }

  void register_params(ParamRegistry& reg, const std::string& prefix) const {
    l1.register_params(reg, prefix + "/l1");
    l2.register_params(reg, prefix + "/l2");
  }
};

// One affine map shared by every grid cell: B x H x W x C_in -> B x H x W x C.
struct HistologyProjector {
  LinearLayer proj;

  static HistologyProjector init(std::size_t in_channels, std::size_t out_channels, Rng& rng) {
    HistologyProjector p;
    p.proj = LinearLayer::init(in_channels, out_channels, rng);
    return p;
  }

  Tensor operator()(const Tensor& grid) const {
    if (grid.rank() != 4)
      throw dim_error("histology projector: expected B x H x W x C input, got " + shape_str(grid.shape()));
    if (grid.dim(3) != proj.weight.dim(0))
      throw dim_error("histology projector: grid has " + std::to_string(grid.dim(3)) +
                      " channels, projector expects " + std::to_string(proj.weight.dim(0)));
    return proj(grid);
  }

  void register_params(ParamRegistry& reg, const std::string& prefix) const {
    proj.register_params(reg, prefix + "/proj");
  }
};

}  // namespace subfuse

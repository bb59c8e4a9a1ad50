#pragma once

// The full two-stream fusion model: a tumour-gene stream and a TME-gene
// stream, parameter-disjoint, whose pooled outputs are concatenated into a
// single linear classifier head.  The head doubles as the per-branch
// predictor by zeroing the other branch's half of its input.

#include <cstddef>
#include <string>
#include <vector>

#include "subfuse/data.hpp"
#include "subfuse/errors.hpp"
#include "subfuse/fusion.hpp"
#include "subfuse/nn.hpp"
#include "subfuse/ops.hpp"

namespace subfuse {

struct ModelOutput {
  SubspaceFusionOutput t;  // tumour stream (pooled embedding in .fused)
  SubspaceFusionOutput e;  // TME stream
  Tensor logits;           // classifier on concat(z_t, z_e)
};

class FusionModel {
 public:
  SubspaceStream stream_t;
  SubspaceStream stream_e;
  LinearLayer classifier;

  static FusionModel init(const GenePartition& partition, std::size_t data_channels,
                          std::size_t gene_hidden, std::size_t classes, const FusionConfig& cfg,
                          Rng& rng) {
    if (classes < 2) throw config_error("model: need at least 2 output classes");
    FusionModel m;
    m.embed_ = cfg.embed_dim;
    m.classes_ = classes;
    m.stream_t = SubspaceStream::init(partition.tumour, data_channels, gene_hidden, cfg, rng);
    m.stream_e = SubspaceStream::init(partition.tme, data_channels, gene_hidden, cfg, rng);
    m.classifier = LinearLayer::init(2 * cfg.embed_dim, classes, rng);
    return m;
  }

  ModelOutput forward(const Tensor& genes, const Tensor& patches) {
    ModelOutput out{stream_t.run(genes, patches), stream_e.run(genes, patches), Tensor()};
    out.logits = classifier(concat({out.t.fused, out.e.fused}, 1));
    return out;
  }

  // Branch prediction through the shared head: the embedding is detached and
  // the other half of the head input is zeroed, so a backward pass through
  // the result reaches classifier parameters only.
  Tensor branch_logits(const Tensor& z, bool tumour_branch) const {
    if (z.rank() != 2 || z.dim(1) != embed_)
      throw dim_error("branch_logits: expected [B x " + std::to_string(embed_) + "], got " +
                      shape_str(z.shape()));
    Tensor detached = Tensor::constant(z.values(), z.shape());
    Tensor blank = Tensor::zeros(z.shape());
    Tensor both = tumour_branch ? concat({detached, blank}, 1) : concat({blank, detached}, 1);
    return classifier(both);
  }

  void register_params(ParamRegistry& reg) {
    stream_t.register_params(reg, "stream_t");
    stream_e.register_params(reg, "stream_e");
    classifier.register_params(reg, "classifier");
  }

  std::size_t embed_dim() const { return embed_; }
  std::size_t classes() const { return classes_; }

 private:
  std::size_t embed_ = 0;
  std::size_t classes_ = 0;
};

}  // namespace subfuse

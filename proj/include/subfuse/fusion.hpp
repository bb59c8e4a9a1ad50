#pragma once

// One subspace fusion stream: a multi-modal teacher map fuses the gene
// embedding with every histology cell; a small conv head turns the teacher
// into sampling offsets; histology features are resampled at the offset
// positions and attended to by teacher queries; a batch-Gram consistency
// loss ties the sampling positions to gene-space similarity structure.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "subfuse/encoders.hpp"
#include "subfuse/errors.hpp"
#include "subfuse/nn.hpp"
#include "subfuse/ops.hpp"
#include "subfuse/sampling.hpp"

namespace subfuse {

struct FusionConfig {
  std::size_t heads = 4;
  std::size_t embed_dim = 64;
  std::size_t grid_h = 7;
  std::size_t grid_w = 7;
  double offset_scale = 0.5;

  void validate() const {
    if (heads == 0 || embed_dim == 0) throw config_error("fusion: heads and embed_dim must be positive");
    if (embed_dim % heads != 0)
      throw config_error("fusion: heads (" + std::to_string(heads) + ") must divide embed_dim (" +
                         std::to_string(embed_dim) + ")");
    if (grid_h == 0 || grid_w == 0) throw config_error("fusion: empty grid");
    if (!(offset_scale > 0.0 && offset_scale <= 1.0))
      throw config_error("fusion: offset_scale must lie in (0,1]");
  }

  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t tokens() const { return grid_h * grid_w; }
};

// Cell centers in normalized [-1,1] coordinates, row-major over the grid,
// each point stored as (x, y). Integer numerators keep the coordinate set
// exactly symmetric under negation.
inline Tensor reference_grid(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw dim_error("reference_grid: empty grid");
  std::vector<double> pts(h * w * 2);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      pts[(y * w + x) * 2] =
          static_cast<double>(2 * static_cast<long>(x) + 1 - static_cast<long>(w)) / static_cast<double>(w);
      pts[(y * w + x) * 2 + 1] =
          static_cast<double>(2 * static_cast<long>(y) + 1 - static_cast<long>(h)) / static_cast<double>(h);
    }
  return Tensor::constant(std::move(pts), {h * w, 2});
}

// Two 3x3 convolutions ending in a tanh bounded by offset_scale. The final
// conv starts at zero so training begins from the identity deformation.
struct OffsetNetwork {
  Conv2dLayer conv1, conv2;
  double scale = 0.5;

  static OffsetNetwork init(std::size_t channels, double offset_scale, Rng& rng) {
    OffsetNetwork net;
    net.conv1 = Conv2dLayer::init(3, 3, channels, channels, rng);
    net.conv2 = Conv2dLayer::zero(3, 3, channels, 2);
    net.scale = offset_scale;
    return net;
  }

  // teacher [B x H x W x C] -> offsets [B x H x W x 2], |offset| <= scale.
  Tensor operator()(const Tensor& teacher) const {
    return subfuse::scale(tanh_op(conv2(selu(conv1(teacher)))), scale);
  }

  void register_params(ParamRegistry& reg, const std::string& prefix) const {
    conv1.register_params(reg, prefix + "/conv1");
    conv2.register_params(reg, prefix + "/conv2");
  }
};

// Multi-head attention with queries from teacher tokens and keys/values
// from deformed tokens; heads are concatenated, projected, and mean-pooled
// over the token axis.
struct CrossAttention {
  LinearLayer wq, wk, wv, wo;
  std::size_t heads = 1;

  static CrossAttention init(std::size_t embed_dim, std::size_t heads, Rng& rng) {
    if (embed_dim % heads != 0) throw config_error("attention: heads must divide embed_dim");
    CrossAttention a;
    a.wq = LinearLayer::init(embed_dim, embed_dim, rng);
    a.wk = LinearLayer::init(embed_dim, embed_dim, rng);
    a.wv = LinearLayer::init(embed_dim, embed_dim, rng);
    a.wo = LinearLayer::init(embed_dim, embed_dim, rng);
    a.heads = heads;
    return a;
  }

  // teacher, deformed: [B x N x C] -> [B x C]
  Tensor operator()(const Tensor& teacher, const Tensor& deformed) const {
    detail::check_same_shape("attention", teacher, deformed);
    if (teacher.rank() != 3) throw dim_error("attention: expected B x N x C tokens");
    const std::size_t c = teacher.dim(2);
    if (c % heads != 0) throw config_error("attention: heads must divide the channel count");
    const std::size_t d = c / heads;
    Tensor q = wq(teacher), k = wk(deformed), v = wv(deformed);
    std::vector<Tensor> outs;
    outs.reserve(heads);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t m = 0; m < heads; ++m) {
      Tensor qm = slice_last(q, m * d, d);
      Tensor km = slice_last(k, m * d, d);
      Tensor vm = slice_last(v, m * d, d);
      Tensor att = softmax(scale(batched_matmul_nt(qm, km), inv_sqrt_d), 2);
      outs.push_back(batched_matmul(att, vm));
    }
    return mean_tokens(wo(concat(outs, 2)));
  }

  void register_params(ParamRegistry& reg, const std::string& prefix) const {
    wq.register_params(reg, prefix + "/wq");
    wk.register_params(reg, prefix + "/wk");
    wv.register_params(reg, prefix + "/wv");
    wo.register_params(reg, prefix + "/wo");
  }
};

// Batch-similarity consistency: Frobenius distance between the cosine Gram
// of gene embeddings and that of the flattened (un-clamped) sampling
// positions, divided by the batch size.
inline Tensor ge_con_loss(const Tensor& gene_emb, const Tensor& sample_points) {
  if (gene_emb.rank() != 2) throw dim_error("ge_con: gene embeddings must be B x D");
  const std::size_t b = gene_emb.dim(0);
  if (sample_points.rank() < 2 || sample_points.dim(0) != b)
    throw dim_error("ge_con: sample points must share the batch dimension");
  Tensor flat = reshape(sample_points, {b, sample_points.size() / b});
  Tensor diff = sub(gram_matrix(gene_emb), gram_matrix(flat));
  return scale(frobenius_norm(diff), 1.0 / static_cast<double>(b));
}

struct SubspaceFusionOutput {
  Tensor teacher;        // B x H x W x C
  Tensor offsets;        // B x H x W x 2, bounded by offset_scale
  Tensor sample_points;  // B x H x W x 2, clamped to [-1,1]
  Tensor fused;          // B x C
  Tensor gene_emb;       // B x C
  Tensor ge_con;         // scalar consistency loss
};

// All parameters of one stream; the two streams of a model are fully
// parameter-disjoint.
struct SubspaceStream {
  GenomicEncoder gene_enc;
  HistologyProjector hist_proj;
  LinearLayer teacher_map;  // 2C -> C
  OffsetNetwork offset_net;
  CrossAttention attn;
  std::vector<std::size_t> subspace;
  FusionConfig cfg;

  static SubspaceStream init(std::vector<std::size_t> subspace_cols, std::size_t data_channels,
                             std::size_t hidden, const FusionConfig& cfg, Rng& rng) {
    cfg.validate();
    if (subspace_cols.empty()) throw config_error("stream: empty gene subspace");
    SubspaceStream s;
    s.subspace = std::move(subspace_cols);
    s.cfg = cfg;
    const std::size_t c = cfg.embed_dim;
    s.gene_enc = GenomicEncoder::init(s.subspace.size(), hidden, c, rng);
    s.hist_proj = HistologyProjector::init(data_channels, c, rng);
    s.teacher_map = LinearLayer::init(2 * c, c, rng);
    s.offset_net = OffsetNetwork::init(c, cfg.offset_scale, rng);
    s.attn = CrossAttention::init(c, cfg.heads, rng);
    return s;
  }

  // Gene embedding broadcast to every cell, concatenated with the cell's
  // histology feature, then mapped 2C -> C.
  Tensor fuse_teacher(const Tensor& gene_emb, const Tensor& hist_feat) const {
    const std::size_t b = hist_feat.dim(0), h = hist_feat.dim(1), w = hist_feat.dim(2);
    const std::size_t c = cfg.embed_dim;
    if (gene_emb.rank() != 2 || gene_emb.dim(0) != b || gene_emb.dim(1) != c ||
        hist_feat.rank() != 4 || hist_feat.dim(3) != c)
      throw dim_error("fuse_teacher: incompatible shapes " + shape_str(gene_emb.shape()) + " and " +
                      shape_str(hist_feat.shape()));
    Tensor gene_cells = reshape(tile_rows(gene_emb, h * w), {b, h, w, c});
    return teacher_map(concat({gene_cells, hist_feat}, 3));
  }

  SubspaceFusionOutput run(const Tensor& genes, const Tensor& patches) const {
    if (patches.rank() != 4) throw dim_error("stream: patches must be B x H x W x C");
    if (patches.dim(1) != cfg.grid_h || patches.dim(2) != cfg.grid_w)
      throw config_error("stream: dataset grid " + std::to_string(patches.dim(1)) + "x" +
                         std::to_string(patches.dim(2)) + " does not match fusion grid " +
                         std::to_string(cfg.grid_h) + "x" + std::to_string(cfg.grid_w));
    const std::size_t b = patches.dim(0), n = cfg.tokens(), c = cfg.embed_dim;

    SubspaceFusionOutput out;
    out.gene_emb = gene_enc.encode(genes, subspace);
    Tensor hist_feat = hist_proj(patches);
    out.teacher = fuse_teacher(out.gene_emb, hist_feat);
    out.offsets = offset_net(out.teacher);

    // p + delta_p: the raw positions feed the consistency loss, their
    // clamped form feeds the sampler.
    Tensor raw_points = add_broadcast0(reshape(out.offsets, {b, n, 2}), reference_grid(cfg.grid_h, cfg.grid_w));
    Tensor clamped = clamp(raw_points, -1.0, 1.0);
    out.sample_points = reshape(clamped, {b, cfg.grid_h, cfg.grid_w, 2});

    Tensor deformed = batched_bilinear_sample(hist_feat, clamped);
    out.fused = attn(reshape(out.teacher, {b, n, c}), deformed);
    out.ge_con = ge_con_loss(out.gene_emb, raw_points);
    return out;
  }

  void register_params(ParamRegistry& reg, const std::string& prefix) const {
    gene_enc.register_params(reg, prefix + "/genes");
    hist_proj.register_params(reg, prefix + "/hist");
    teacher_map.register_params(reg, prefix + "/teacher");
    offset_net.register_params(reg, prefix + "/offset");
    attn.register_params(reg, prefix + "/attn");
  }
};

}  // namespace subfuse

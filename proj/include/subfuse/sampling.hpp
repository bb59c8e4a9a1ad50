#pragma once

// Spatial ops: differentiable bilinear grid sampling and same-padded 2d
// convolution (im2col backed).
//
// Coordinate convention: a point (gx, gy) lives in [-1,1]^2; gx spans the
// width axis, gy the height axis. Cell centers map to integer pixel
// coordinates via x = (gx+1)/2*W - 1/2, so the reference grid of cell
// centers samples stored features exactly. Pixel coordinates within
// kKnotSnap of an integer are snapped to it, which keeps grid-aligned
// sampling bitwise exact despite rounding in the normalized coordinates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "subfuse/ops.hpp"
#include "subfuse/tensor.hpp"

namespace subfuse {

namespace detail {

inline constexpr double kKnotSnap = 1e-8;

struct SamplePoint {
  std::size_t x0, x1, y0, y1;  // clamped neighbor indices
  double dx, dy;               // interpolation fractions in [0,1)
  bool inside_x, inside_y;     // normalized coord strictly inside [-1,1]
};

inline SamplePoint resolve_point(double gx, double gy, std::size_t h, std::size_t w) {
  SamplePoint sp;
  sp.inside_x = gx >= -1.0 && gx <= 1.0;
  sp.inside_y = gy >= -1.0 && gy <= 1.0;
  const double cgx = std::clamp(gx, -1.0, 1.0);
  const double cgy = std::clamp(gy, -1.0, 1.0);
  double x = (cgx + 1.0) * 0.5 * static_cast<double>(w) - 0.5;
  double y = (cgy + 1.0) * 0.5 * static_cast<double>(h) - 0.5;
  const double rx = std::round(x), ry = std::round(y);
  if (std::abs(x - rx) < kKnotSnap) x = rx;
  if (std::abs(y - ry) < kKnotSnap) y = ry;
  const double fx = std::floor(x), fy = std::floor(y);
  sp.dx = x - fx;
  sp.dy = y - fy;
  const auto clamp_idx = [](double v, std::size_t n) {
    if (v < 0.0) return static_cast<std::size_t>(0);
    if (v > static_cast<double>(n - 1)) return n - 1;
    return static_cast<std::size_t>(v);
  };
  sp.x0 = clamp_idx(fx, w);
  sp.x1 = clamp_idx(fx + 1.0, w);
  sp.y0 = clamp_idx(fy, h);
  sp.y1 = clamp_idx(fy + 1.0, h);
  return sp;
}

// Forward kernel for one point; accumulation skips zero weights so knot
// coordinates copy the stored feature bitwise.
inline void sample_forward(const double* feat, std::size_t h, std::size_t w, std::size_t c,
                           const SamplePoint& sp, double* out) {
  const double w00 = (1.0 - sp.dx) * (1.0 - sp.dy);
  const double w01 = sp.dx * (1.0 - sp.dy);
  const double w10 = (1.0 - sp.dx) * sp.dy;
  const double w11 = sp.dx * sp.dy;
  const double* f00 = feat + (sp.y0 * w + sp.x0) * c;
  const double* f01 = feat + (sp.y0 * w + sp.x1) * c;
  const double* f10 = feat + (sp.y1 * w + sp.x0) * c;
  const double* f11 = feat + (sp.y1 * w + sp.x1) * c;
  if (w00 == 1.0) {
    std::copy_n(f00, c, out);
    return;
  }
  for (std::size_t j = 0; j < c; ++j) {
    double acc = 0.0;
    if (w00 != 0.0) acc += w00 * f00[j];
    if (w01 != 0.0) acc += w01 * f01[j];
    if (w10 != 0.0) acc += w10 * f10[j];
    if (w11 != 0.0) acc += w11 * f11[j];
    out[j] = acc;
  }
}

inline void sample_backward(const double* feat, double* dfeat, std::size_t w, std::size_t c,
                            const SamplePoint& sp, const double* g, std::size_t hh,
                            double* dgx, double* dgy) {
  (void)hh;
  const double w00 = (1.0 - sp.dx) * (1.0 - sp.dy);
  const double w01 = sp.dx * (1.0 - sp.dy);
  const double w10 = (1.0 - sp.dx) * sp.dy;
  const double w11 = sp.dx * sp.dy;
  const std::size_t i00 = (sp.y0 * w + sp.x0) * c;
  const std::size_t i01 = (sp.y0 * w + sp.x1) * c;
  const std::size_t i10 = (sp.y1 * w + sp.x0) * c;
  const std::size_t i11 = (sp.y1 * w + sp.x1) * c;
  double gx_acc = 0.0, gy_acc = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    const double gj = g[j];
    if (dfeat) {
      dfeat[i00 + j] += w00 * gj;
      dfeat[i01 + j] += w01 * gj;
      dfeat[i10 + j] += w10 * gj;
      dfeat[i11 + j] += w11 * gj;
    }
    gx_acc += gj * ((1.0 - sp.dy) * (feat[i01 + j] - feat[i00 + j]) + sp.dy * (feat[i11 + j] - feat[i10 + j]));
    gy_acc += gj * ((1.0 - sp.dx) * (feat[i10 + j] - feat[i00 + j]) + sp.dx * (feat[i11 + j] - feat[i01 + j]));
  }
  if (dgx && sp.inside_x) *dgx += gx_acc;
  if (dgy && sp.inside_y) *dgy += gy_acc;
}

}  // namespace detail

// 4-neighbor bilinear interpolation of feat[H x W x C] at P normalized
// points. Points outside [-1,1] are clamped to the border (no error path:
// learned offsets may push samples slightly out of range). Differentiable
// w.r.t. both the feature map and the points.
inline Tensor bilinear_sample(const Tensor& feat, const Tensor& points) {
  if (feat.rank() != 3) throw dim_error("bilinear_sample: features must be H x W x C, got " + shape_str(feat.shape()));
  if (points.rank() != 2 || points.dim(1) != 2)
    throw dim_error("bilinear_sample: points must be P x 2, got " + shape_str(points.shape()));
  const std::size_t h = feat.dim(0), w = feat.dim(1), c = feat.dim(2), p = points.dim(0);
  std::vector<double> out(p * c);
  std::vector<detail::SamplePoint> sps(p);
  for (std::size_t i = 0; i < p; ++i) {
    sps[i] = detail::resolve_point(points.values()[2 * i], points.values()[2 * i + 1], h, w);
    detail::sample_forward(feat.values().data(), h, w, c, sps[i], out.data() + i * c);
  }
  const double half_w = 0.5 * static_cast<double>(w), half_h = 0.5 * static_cast<double>(h);
  return make_op("bilinear_sample", {p, c}, std::move(out), {feat, points},
                 [h, w, c, p, half_w, half_h, sps = std::move(sps)](TensorNode& nd) {
                   TensorNode& pf = *nd.parents[0];
                   TensorNode& pp = *nd.parents[1];
                   double* dfeat = nullptr;
                   if (pf.requires_grad) {
                     pf.ensure_grad();
                     dfeat = pf.grad.data();
                   }
                   if (pp.requires_grad) pp.ensure_grad();
                   for (std::size_t i = 0; i < p; ++i) {
                     double dgx = 0.0, dgy = 0.0;
                     detail::sample_backward(pf.value.data(), dfeat, w, c, sps[i], nd.grad.data() + i * c, h,
                                             &dgx, &dgy);
                     if (pp.requires_grad) {
                       pp.grad[2 * i] += dgx * half_w;
                       pp.grad[2 * i + 1] += dgy * half_h;
                     }
                   }
                 });
}

// Batched form: feat[B x H x W x C] sampled at points[B x N x 2] -> [B x N x C].
inline Tensor batched_bilinear_sample(const Tensor& feat, const Tensor& points) {
  if (feat.rank() != 4) throw dim_error("batched_bilinear_sample: features must be B x H x W x C");
  if (points.rank() != 3 || points.dim(2) != 2 || points.dim(0) != feat.dim(0))
    throw dim_error("batched_bilinear_sample: points must be B x N x 2 with matching batch");
  const std::size_t b = feat.dim(0), h = feat.dim(1), w = feat.dim(2), c = feat.dim(3), n = points.dim(1);
  std::vector<double> out(b * n * c);
  std::vector<detail::SamplePoint> sps(b * n);
  for (std::size_t i = 0; i < b; ++i) {
    const double* f = feat.values().data() + i * h * w * c;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t pi = i * n + t;
      sps[pi] = detail::resolve_point(points.values()[2 * pi], points.values()[2 * pi + 1], h, w);
      detail::sample_forward(f, h, w, c, sps[pi], out.data() + pi * c);
    }
  }
  const double half_w = 0.5 * static_cast<double>(w), half_h = 0.5 * static_cast<double>(h);
  return make_op("batched_bilinear_sample", {b, n, c}, std::move(out), {feat, points},
                 [b, h, w, c, n, half_w, half_h, sps = std::move(sps)](TensorNode& nd) {
                   TensorNode& pf = *nd.parents[0];
                   TensorNode& pp = *nd.parents[1];
                   if (pf.requires_grad) pf.ensure_grad();
                   if (pp.requires_grad) pp.ensure_grad();
                   for (std::size_t i = 0; i < b; ++i) {
                     const double* f = pf.value.data() + i * h * w * c;
                     double* dfeat = pf.requires_grad ? pf.grad.data() + i * h * w * c : nullptr;
                     for (std::size_t t = 0; t < n; ++t) {
                       const std::size_t pi = i * n + t;
                       double dgx = 0.0, dgy = 0.0;
                       detail::sample_backward(f, dfeat, w, c, sps[pi], nd.grad.data() + pi * c, h, &dgx, &dgy);
                       if (pp.requires_grad) {
                         pp.grad[2 * pi] += dgx * half_w;
                         pp.grad[2 * pi + 1] += dgy * half_h;
                       }
                     }
                   }
                 });
}

// Zero-padded stride-1 convolution preserving the spatial shape.
// x[B x H x W x Ci], kernel[kh x kw x Ci x Co], bias[Co] -> [B x H x W x Co].
inline Tensor conv2d_same(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  if (x.rank() != 4 || kernel.rank() != 4 || bias.rank() != 1)
    throw dim_error("conv2d_same: bad ranks");
  const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), ci = x.dim(3);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), co = kernel.dim(3);
  if (kernel.dim(2) != ci)
    throw dim_error("conv2d_same: input has " + std::to_string(ci) + " channels, kernel expects " + std::to_string(kernel.dim(2)));
  if (bias.dim(0) != co) throw dim_error("conv2d_same: bias size mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw dim_error("conv2d_same: kernel dims must be odd");
  const std::size_t ph = kh / 2, pw = kw / 2;
  const std::size_t patch = kh * kw * ci, hw = h * w;

  // im2col per sample, kept for the backward weight product.
  std::vector<double> cols(b * hw * patch, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const double* xi = x.values().data() + i * hw * ci;
    double* col = cols.data() + i * hw * patch;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        double* row = col + (y * w + xx) * patch;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - static_cast<long>(ph);
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long sx = static_cast<long>(xx) + static_cast<long>(kx) - static_cast<long>(pw);
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            std::copy_n(xi + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * ci, ci,
                        row + (ky * kw + kx) * ci);
          }
        }
      }
  }
  std::vector<double> out(b * hw * co);
  for (std::size_t i = 0; i < b; ++i) {
    double* oi = out.data() + i * hw * co;
    for (std::size_t r = 0; r < hw; ++r) std::copy_n(bias.values().data(), co, oi + r * co);
    detail::mm_acc(oi, cols.data() + i * hw * patch, kernel.values().data(), hw, patch, co);
  }
  return make_op("conv2d_same", {b, h, w, co}, std::move(out), {x, kernel, bias},
                 [b, h, w, ci, kh, kw, co, ph, pw, patch, hw, cols = std::move(cols)](TensorNode& nd) {
                   TensorNode& px = *nd.parents[0];
                   TensorNode& pk = *nd.parents[1];
                   TensorNode& pb = *nd.parents[2];
                   if (pb.requires_grad) {
                     pb.ensure_grad();
                     for (std::size_t r = 0; r < b * hw; ++r)
                       for (std::size_t o = 0; o < co; ++o) pb.grad[o] += nd.grad[r * co + o];
                   }
                   if (pk.requires_grad) {
                     pk.ensure_grad();
                     for (std::size_t i = 0; i < b; ++i)
                       detail::mm_tn_acc(pk.grad.data(), cols.data() + i * hw * patch,
                                         nd.grad.data() + i * hw * co, hw, patch, co);
                   }
                   if (px.requires_grad) {
                     px.ensure_grad();
                     std::vector<double> dcol(hw * patch);
                     for (std::size_t i = 0; i < b; ++i) {
                       std::fill(dcol.begin(), dcol.end(), 0.0);
                       detail::mm_nt_acc(dcol.data(), nd.grad.data() + i * hw * co, pk.value.data(), hw, co, patch);
                       double* dxi = px.grad.data() + i * hw * ci;
                       for (std::size_t y = 0; y < h; ++y)
                         for (std::size_t xx = 0; xx < w; ++xx) {
                           const double* row = dcol.data() + (y * w + xx) * patch;
                           for (std::size_t ky = 0; ky < kh; ++ky) {
                             const long sy = static_cast<long>(y) + static_cast<long>(ky) - static_cast<long>(ph);
                             if (sy < 0 || sy >= static_cast<long>(h)) continue;
                             for (std::size_t kx = 0; kx < kw; ++kx) {
                               const long sx = static_cast<long>(xx) + static_cast<long>(kx) - static_cast<long>(pw);
                               if (sx < 0 || sx >= static_cast<long>(w)) continue;
                               double* dst = dxi + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * ci;
                               const double* src = row + (ky * kw + kx) * ci;
                               for (std::size_t ch = 0; ch < ci; ++ch) dst[ch] += src[ch];
                             }
                           }
                         }
                     }
                   }
                 });
}

}  // namespace subfuse

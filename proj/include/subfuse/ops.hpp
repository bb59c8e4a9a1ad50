#pragma once

// Differentiable primitives on Tensor. Backward rules accumulate (+=) into
// parent grads so values used twice receive the sum of both paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "subfuse/tensor.hpp"

namespace subfuse {

namespace detail {

// c[m x n] += a[m x k] * b[k x n]
inline void mm_acc(double* c, const double* a, const double* b,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
inline void mm_nt_acc(double* c, const double* a, const double* b,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
inline void mm_tn_acc(double* c, const double* a, const double* b,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw dim_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename F, typename DF>
Tensor unary_op(const char* name, const Tensor& x, F fwd, DF dfn) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x.values()[i]);
  return make_op(name, x.shape(), std::move(out), {x}, [dfn](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < nd.value.size(); ++i)
      p.grad[i] += nd.grad[i] * dfn(p.value[i], nd.value[i]);
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](TensorNode& nd) {
    for (int s = 0; s < 2; ++s) {
      TensorNode& p = *nd.parents[s];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < nd.value.size(); ++i) p.grad[i] += nd.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](TensorNode& nd) {
    for (int s = 0; s < 2; ++s) {
      TensorNode& p = *nd.parents[s];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      const double sign = s == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < nd.value.size(); ++i) p.grad[i] += sign * nd.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [](TensorNode& nd) {
    TensorNode& pa = *nd.parents[0];
    TensorNode& pb = *nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < nd.value.size(); ++i) pa.grad[i] += nd.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < nd.value.size(); ++i) pb.grad[i] += nd.grad[i] * pa.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary_op("scale", a, [c](double x) { return c * x; },
                          [c](double, double) { return c; });
}

// y broadcast over axis 0 of x: out[b, ...] = x[b, ...] + y[...]
inline Tensor add_broadcast0(const Tensor& x, const Tensor& y) {
  if (x.rank() < 1 || Shape(x.shape().begin() + 1, x.shape().end()) != y.shape())
    throw dim_error("add_broadcast0: trailing shape of " + shape_str(x.shape()) + " must equal " + shape_str(y.shape()));
  const std::size_t b = x.dim(0), rest = y.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < rest; ++j) out[i * rest + j] = x.values()[i * rest + j] + y.values()[j];
  return make_op("add_broadcast0", x.shape(), std::move(out), {x, y}, [b, rest](TensorNode& nd) {
    TensorNode& px = *nd.parents[0];
    TensorNode& py = *nd.parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      for (std::size_t i = 0; i < nd.value.size(); ++i) px.grad[i] += nd.grad[i];
    }
    if (py.requires_grad) {
      py.ensure_grad();
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < rest; ++j) py.grad[j] += nd.grad[i * rest + j];
    }
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw dim_error("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::mm_acc(out.data(), a.values().data(), b.values().data(), m, k, n);
  return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& nd) {
    TensorNode& pa = *nd.parents[0];
    TensorNode& pb = *nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      detail::mm_nt_acc(pa.grad.data(), nd.grad.data(), pb.value.data(), m, n, k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      detail::mm_tn_acc(pb.grad.data(), pa.value.data(), nd.grad.data(), m, k, n);
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw dim_error("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  return make_op("transpose", {n, m}, std::move(out), {a}, [m, n](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += nd.grad[j * m + i];
  });
}

inline Tensor reshape(const Tensor& a, Shape s) {
  if (numel(s) != a.size())
    throw dim_error("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
  std::vector<double> out = a.values();
  return make_op("reshape", std::move(s), std::move(out), {a}, [](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < nd.value.size(); ++i) p.grad[i] += nd.grad[i];
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw dim_error("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw dim_error("concat: axis out of range");
  std::size_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != s0.size()) throw dim_error("concat: rank mismatch");
    for (std::size_t d = 0; d < s0.size(); ++d)
      if (d != axis && p.dim(d) != s0[d]) throw dim_error("concat: shape mismatch off the concat axis");
    axis_total += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[axis] = axis_total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

  std::vector<double> out(numel(out_shape));
  const std::size_t out_row = axis_total * inner;
  std::size_t off = 0;
  std::vector<std::size_t> offsets, widths;
  for (const Tensor& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.values().data() + o * w, w, out.data() + o * out_row + off);
    offsets.push_back(off);
    widths.push_back(w);
    off += w;
  }
  return make_op("concat", std::move(out_shape), std::move(out), parts,
                 [outer, out_row, offsets, widths](TensorNode& nd) {
                   for (std::size_t s = 0; s < nd.parents.size(); ++s) {
                     TensorNode& p = *nd.parents[s];
                     if (!p.requires_grad) continue;
                     p.ensure_grad();
                     for (std::size_t o = 0; o < outer; ++o) {
                       const double* g = nd.grad.data() + o * out_row + offsets[s];
                       double* pg = p.grad.data() + o * widths[s];
                       for (std::size_t j = 0; j < widths[s]; ++j) pg[j] += g[j];
                     }
                   }
                 });
}

// [B x C] -> [B x n x C], each row repeated n times. Backward sums over the
// repeated axis.
inline Tensor tile_rows(const Tensor& x, std::size_t n) {
  if (x.rank() != 2) throw dim_error("tile_rows: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), c = x.dim(1);
  std::vector<double> out(b * n * c);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(x.values().data() + i * c, c, out.data() + (i * n + r) * c);
  return make_op("tile_rows", {b, n, c}, std::move(out), {x}, [b, n, c](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += nd.grad[(i * n + r) * c + j];
  });
}

// [B x N x C] -> [B x C], mean over the token axis.
inline Tensor mean_tokens(const Tensor& x) {
  if (x.rank() != 3) throw dim_error("mean_tokens: expected rank 3, got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), n = x.dim(1), c = x.dim(2);
  std::vector<double> out(b * c, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += x.values()[(i * n + t) * c + j];
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= inv;
  return make_op("mean_tokens", {b, c}, std::move(out), {x}, [b, n, c, inv](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < c; ++j) p.grad[(i * n + t) * c + j] += inv * nd.grad[i * c + j];
  });
}

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_op("sum", Shape{}, {s}, {x}, [](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (double& g : p.grad) g += nd.grad[0];
  });
}

inline Tensor mean_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  return make_op("mean", Shape{}, {s * inv}, {x}, [inv](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (double& g : p.grad) g += inv * nd.grad[0];
  });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary_op("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                          [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// Self-normalizing activation constants from Klambauer et al.
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kSeluScale = 1.0507009873554804934193349852946;

inline Tensor selu(const Tensor& x) {
  return detail::unary_op(
      "selu", x,
      [](double v) { return v > 0.0 ? kSeluScale * v : kSeluScale * kSeluAlpha * std::expm1(v); },
      [](double v, double) {
        return v > 0.0 ? kSeluScale : kSeluScale * kSeluAlpha * std::exp(v);
      });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      "sigmoid", x,
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh_op(const Tensor& x) {
  return detail::unary_op("tanh", x, [](double v) { return std::tanh(v); },
                          [](double, double y) { return 1.0 - y * y; });
}

inline Tensor log_op(const Tensor& x) {
  return detail::unary_op("log", x, [](double v) { return std::log(v); },
                          [](double v, double) { return 1.0 / v; });
}

inline Tensor exp_op(const Tensor& x) {
  return detail::unary_op("exp", x, [](double v) { return std::exp(v); },
                          [](double, double y) { return y; });
}

inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary_op(
      "clamp", x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// Softmax along `axis`, stabilized by max subtraction so magnitudes around
// 1e3 neither overflow nor lose the sum-to-one property.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw dim_error("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  const std::size_t n = x.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);

  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = x.values()[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x.values()[base + j * inner]);
      double denom = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(x.values()[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= denom;
    }
  return make_op("softmax", x.shape(), std::move(out), {x}, [n, outer, inner](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += nd.grad[base + j * inner] * nd.value[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const double y = nd.value[base + j * inner];
          p.grad[base + j * inner] += y * (nd.grad[base + j * inner] - dot);
        }
      }
  });
}

// Rows scaled to unit L2 norm. A zero row has no direction and is an error.
inline Tensor row_normalize(const Tensor& x) {
  if (x.rank() != 2) throw dim_error("row_normalize: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), d = x.dim(1);
  std::vector<double> norms(b);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < b; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += x.values()[i * d + j] * x.values()[i * d + j];
    const double nrm = std::sqrt(ss);
    if (nrm == 0.0) throw numeric_error("row_normalize: zero-norm row " + std::to_string(i));
    norms[i] = nrm;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.values()[i * d + j] / nrm;
  }
  return make_op("row_normalize", x.shape(), std::move(out), {x},
                 [b, d, norms = std::move(norms)](TensorNode& nd) {
                   TensorNode& p = *nd.parents[0];
                   if (!p.requires_grad) return;
                   p.ensure_grad();
                   for (std::size_t i = 0; i < b; ++i) {
                     double dot = 0.0;
                     for (std::size_t j = 0; j < d; ++j) dot += nd.grad[i * d + j] * nd.value[i * d + j];
                     for (std::size_t j = 0; j < d; ++j)
                       p.grad[i * d + j] += (nd.grad[i * d + j] - nd.value[i * d + j] * dot) / norms[i];
                   }
                 });
}

// Batch Gram matrix of row-normalized features: entries are pairwise cosine
// similarities, so the result is symmetric with a unit diagonal.
inline Tensor gram_matrix(const Tensor& x) {
  Tensor xn = row_normalize(x);
  Tensor g = matmul(xn, transpose(xn));
  // Cosine of a row with itself is identically 1, so pin the diagonal to the
  // exact value; its derivative w.r.t. the row is exactly zero, so the pinned
  // entries contribute no gradient.
  const std::size_t b = g.dim(0);
  std::vector<double> vals = g.values();
  for (std::size_t i = 0; i < b; ++i) vals[i * b + i] = 1.0;
  return make_op("gram_matrix", g.shape(), std::move(vals), {g}, [b](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j)
        if (i != j) p.grad[i * b + j] += nd.grad[i * b + j];
  });
}

inline Tensor frobenius_norm(const Tensor& x) {
  double ss = 0.0;
  for (double v : x.values()) ss += v * v;
  const double nrm = std::sqrt(ss);
  return make_op("frobenius_norm", Shape{}, {nrm}, {x}, [nrm](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad || nrm == 0.0) return;
    p.ensure_grad();
    const double g = nd.grad[0] / nrm;
    for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += g * p.value[i];
  });
}

// Affine map over the last axis: out[..., o] = sum_i x[..., i] w[i, o] + b[o].
// Leading axes are flattened, so the same weights apply per row / grid cell.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() < 1 || w.rank() != 2 || b.rank() != 1)
    throw dim_error("linear: bad ranks");
  const std::size_t in = w.dim(0), out_dim = w.dim(1);
  if (x.dim(x.rank() - 1) != in || b.dim(0) != out_dim)
    throw dim_error("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  const std::size_t rows = x.size() / in;
  std::vector<double> out(rows * out_dim);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(b.values().data(), out_dim, out.data() + r * out_dim);
  detail::mm_acc(out.data(), x.values().data(), w.values().data(), rows, in, out_dim);
  Shape os = x.shape();
  os.back() = out_dim;
  return make_op("linear", std::move(os), std::move(out), {x, w, b},
                 [rows, in, out_dim](TensorNode& nd) {
                   TensorNode& px = *nd.parents[0];
                   TensorNode& pw = *nd.parents[1];
                   TensorNode& pb = *nd.parents[2];
                   if (px.requires_grad) {
                     px.ensure_grad();
                     detail::mm_nt_acc(px.grad.data(), nd.grad.data(), pw.value.data(), rows, out_dim, in);
                   }
                   if (pw.requires_grad) {
                     pw.ensure_grad();
                     detail::mm_tn_acc(pw.grad.data(), px.value.data(), nd.grad.data(), rows, in, out_dim);
                   }
                   if (pb.requires_grad) {
                     pb.ensure_grad();
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t o = 0; o < out_dim; ++o) pb.grad[o] += nd.grad[r * out_dim + o];
                   }
                 });
}

// Contiguous slice along the last axis (used to split attention heads).
inline Tensor slice_last(const Tensor& x, std::size_t start, std::size_t len) {
  const std::size_t c = x.dim(x.rank() - 1);
  if (start + len > c) throw dim_error("slice_last: range out of bounds");
  const std::size_t rows = x.size() / c;
  std::vector<double> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.values().data() + r * c + start, len, out.data() + r * len);
  Shape os = x.shape();
  os.back() = len;
  return make_op("slice_last", std::move(os), std::move(out), {x}, [rows, c, start, len](TensorNode& nd) {
    TensorNode& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) p.grad[r * c + start + j] += nd.grad[r * len + j];
  });
}

// out[b] = a[b] * x[b] for stacks of matrices.
inline Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw dim_error("batched_matmul: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(bs * m * n, 0.0);
  for (std::size_t i = 0; i < bs; ++i)
    detail::mm_acc(out.data() + i * m * n, a.values().data() + i * m * k, b.values().data() + i * k * n, m, k, n);
  return make_op("batched_matmul", {bs, m, n}, std::move(out), {a, b}, [bs, m, k, n](TensorNode& nd) {
    TensorNode& pa = *nd.parents[0];
    TensorNode& pb = *nd.parents[1];
    for (std::size_t i = 0; i < bs; ++i) {
      if (pa.requires_grad) {
        pa.ensure_grad();
        detail::mm_nt_acc(pa.grad.data() + i * m * k, nd.grad.data() + i * m * n, pb.value.data() + i * k * n, m, n, k);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        detail::mm_tn_acc(pb.grad.data() + i * k * n, pa.value.data() + i * m * k, nd.grad.data() + i * m * n, m, k, n);
      }
    }
  });
}

// out[b] = a[b] * x[b]^T: scores = q k^T without materializing transposes.
inline Tensor batched_matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
    throw dim_error("batched_matmul_nt: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  std::vector<double> out(bs * m * n, 0.0);
  for (std::size_t i = 0; i < bs; ++i)
    detail::mm_nt_acc(out.data() + i * m * n, a.values().data() + i * m * k, b.values().data() + i * n * k, m, k, n);
  return make_op("batched_matmul_nt", {bs, m, n}, std::move(out), {a, b}, [bs, m, k, n](TensorNode& nd) {
    TensorNode& pa = *nd.parents[0];
    TensorNode& pb = *nd.parents[1];
    for (std::size_t i = 0; i < bs; ++i) {
      if (pa.requires_grad) {
        pa.ensure_grad();
        detail::mm_acc(pa.grad.data() + i * m * k, nd.grad.data() + i * m * n, pb.value.data() + i * n * k, m, n, k);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        detail::mm_tn_acc(pb.grad.data() + i * n * k, nd.grad.data() + i * m * n, pa.value.data() + i * m * k, m, n, k);
      }
    }
  });
}

// Plain (non-differentiable) cosine similarity of two flat vectors.
// Returns 0 when either norm vanishes.
inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw contract_error("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace subfuse

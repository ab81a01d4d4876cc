#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "aupipe/tensor/tensor.hpp"

namespace aupipe {

/// Multiply-accumulate tallies for the dense products executed on this
/// thread. Attention products go through bmm, linear layers through matmul,
/// so the two counters separate attention cost from projection cost.
struct OpCounters {
  std::uint64_t matmul_macs = 0;
  std::uint64_t bmm_macs = 0;
};

inline OpCounters& op_counters() {
  thread_local OpCounters counters;
  return counters;
}

namespace detail {

// C[m x n] += A[m x k] * B[k x n]. Each strip of eight outputs is summed in
// registers over k, then added to C.
template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t W = 8;
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c + i * n;
    const Real* arow = a + i * k;
    std::size_t j = 0;
    for (; j + W <= n; j += W) {
      Real acc[W] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = arow[p];
        const Real* bp = b + p * n + j;
        for (std::size_t t = 0; t < W; ++t) acc[t] += av * bp[t];
      }
      for (std::size_t t = 0; t < W; ++t) crow[j + t] += acc[t];
    }
    for (; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * b[p * n + j];
      crow[j] += acc;
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T
template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real* brow = b + p * n;
      Real acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    const Real* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      Real* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

}  // namespace detail

template <typename Real>
using TensorList = std::vector<BasicTensor<Real>>;

/// Elementwise sum. `b` may also be a trailing-suffix bias (shape of `b`
/// equals the last axes of `a`), repeated over the leading axes.
template <typename Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  const bool same = a.shape() == b.shape();
  if (!same && !(b.rank() < a.rank() && detail::is_suffix(a.shape(), b.shape())))
    throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t nb = b.size();
  std::vector<Real> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % nb];
  return BasicTensor<Real>::make_result(same ? "add" : "add_bias", a.shape(), std::move(out), {&a, &b},
                                        [nb](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          if (!pg[0].empty())
                                            for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                                          if (!pg[1].empty())
                                            for (std::size_t i = 0; i < g.size(); ++i) pg[1][i % nb] += g[i];
                                        });
}

template <typename Real>
BasicTensor<Real> sub(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("sub: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::vector<Real> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return BasicTensor<Real>::make_result("sub", a.shape(), std::move(out), {&a, &b},
                                        [](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          if (!pg[0].empty())
                                            for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                                          if (!pg[1].empty())
                                            for (std::size_t i = 0; i < g.size(); ++i) pg[1][i] -= g[i];
                                        });
}

/// Elementwise (Hadamard) product of equal shapes.
template <typename Real>
BasicTensor<Real> mul(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto as = a.storage();
  auto bs = b.storage();
  return BasicTensor<Real>::make_result("mul", a.shape(), std::move(out), {&a, &b},
                                        [as, bs](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          if (!pg[0].empty())
                                            for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * (*bs)[i];
                                          if (!pg[1].empty())
                                            for (std::size_t i = 0; i < g.size(); ++i) pg[1][i] += g[i] * (*as)[i];
                                        });
}

template <typename Real>
BasicTensor<Real> scale(const BasicTensor<Real>& a, Real factor) {
  std::vector<Real> out(a.values());
  for (auto& v : out) v *= factor;
  return BasicTensor<Real>::make_result("scale", a.shape(), std::move(out), {&a},
                                        [factor](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * factor;
                                        });
}

template <typename Real>
BasicTensor<Real> matmul(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> out(m * n, Real(0));
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  op_counters().matmul_macs += static_cast<std::uint64_t>(m) * k * n;
  auto as = a.storage();
  auto bs = b.storage();
  return BasicTensor<Real>::make_result(
      "matmul", Shape{m, n}, std::move(out), {&a, &b},
      [as, bs, m, k, n](std::span<const Real> g, std::span<std::span<Real>> pg) {
        if (!pg[0].empty()) detail::gemm_nt(g.data(), bs->data(), pg[0].data(), m, n, k);
        if (!pg[1].empty()) detail::gemm_tn(as->data(), g.data(), pg[1].data(), m, k, n);
      });
}

/// Batched product over matching leading axes: [..., m, k] x [..., k, n].
template <typename Real>
BasicTensor<Real> bmm(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  const auto r = a.rank();
  if (r < 3 || b.rank() != r || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()) ||
      a.dim(r - 1) != b.dim(r - 2))
    throw ShapeError("bmm: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  const std::size_t m = a.dim(r - 2), k = a.dim(r - 1), n = b.dim(r - 1);
  const std::size_t batch = a.size() / (m * k);
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  shape.push_back(n);
  std::vector<Real> out(batch * m * n, Real(0));
  for (std::size_t t = 0; t < batch; ++t)
    detail::gemm_nn(a.data().data() + t * m * k, b.data().data() + t * k * n, out.data() + t * m * n, m, k, n);
  op_counters().bmm_macs += static_cast<std::uint64_t>(batch) * m * k * n;
  auto as = a.storage();
  auto bs = b.storage();
  return BasicTensor<Real>::make_result(
      "bmm", std::move(shape), std::move(out), {&a, &b},
      [as, bs, batch, m, k, n](std::span<const Real> g, std::span<std::span<Real>> pg) {
        for (std::size_t t = 0; t < batch; ++t) {
          const Real* gt = g.data() + t * m * n;
          if (!pg[0].empty()) detail::gemm_nt(gt, bs->data() + t * k * n, pg[0].data() + t * m * k, m, n, k);
          if (!pg[1].empty()) detail::gemm_tn(as->data() + t * m * k, gt, pg[1].data() + t * k * n, m, k, n);
        }
      });
}

template <typename Real>
BasicTensor<Real> reshape(const BasicTensor<Real>& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  for (auto e : shape)
    if (e == 0) throw ShapeError("reshape: extents must be positive, got " + shape_str(shape));
  return BasicTensor<Real>::make_view("reshape", std::move(shape), a,
                                      [](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                        for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                                      });
}

namespace detail {

// For each output element of a permutation, the flat index it reads from.
inline std::vector<std::size_t> permute_sources(const Shape& in, const std::vector<std::size_t>& axes) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  std::vector<std::size_t> src(shape_numel(in));
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    src[flat] = offset;
    for (std::size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < out[ax]) {
        offset += stride[ax];
        break;
      }
      offset -= stride[ax] * (out[ax] - 1);
      idx[ax] = 0;
    }
  }
  return src;
}

}  // namespace detail

/// Reorders axes: output axis i is input axis axes[i].
template <typename Real>
BasicTensor<Real> permute(const BasicTensor<Real>& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) throw ShapeError("permute: axis list length mismatch");
  for (auto ax : axes) {
    if (ax >= r || seen[ax]) throw ShapeError("permute: invalid axis list");
    seen[ax] = true;
  }
  Shape shape(r);
  for (std::size_t i = 0; i < r; ++i) shape[i] = a.dim(axes[i]);
  auto src = std::make_shared<std::vector<std::size_t>>(detail::permute_sources(a.shape(), axes));
  std::vector<Real> out(a.size());
  const auto& v = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[(*src)[i]];
  return BasicTensor<Real>::make_result("permute", std::move(shape), std::move(out), {&a},
                                        [src](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          for (std::size_t i = 0; i < g.size(); ++i) pg[0][(*src)[i]] += g[i];
                                        });
}

/// Swaps the last two axes.
template <typename Real>
BasicTensor<Real> transpose_last(const BasicTensor<Real>& a) {
  if (a.rank() < 2) throw ShapeError("transpose_last: rank must be at least 2");
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

/// Cyclic shift: the element at index i along `axis` moves to (i + shift) mod extent.
template <typename Real>
BasicTensor<Real> roll(const BasicTensor<Real>& a, long shift, std::size_t axis) {
  const auto s = detail::split_at(a.shape(), axis);
  const long n = static_cast<long>(s.extent);
  const std::size_t k = static_cast<std::size_t>(((shift % n) + n) % n);
  std::vector<Real> out(a.size());
  const auto& v = a.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.extent; ++i) {
      const std::size_t dst = (i + k) % s.extent;
      std::copy_n(v.begin() + static_cast<long>((o * s.extent + i) * s.inner), s.inner,
                  out.begin() + static_cast<long>((o * s.extent + dst) * s.inner));
    }
  return BasicTensor<Real>::make_result("roll", a.shape(), std::move(out), {&a},
                                        [s, k](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          for (std::size_t o = 0; o < s.outer; ++o)
                                            for (std::size_t i = 0; i < s.extent; ++i) {
                                              const std::size_t dst = (i + k) % s.extent;
                                              for (std::size_t j = 0; j < s.inner; ++j)
                                                pg[0][(o * s.extent + i) * s.inner + j] +=
                                                    g[(o * s.extent + dst) * s.inner + j];
                                            }
                                        });
}

/// Contiguous sub-range [start, start + length) along `axis`.
template <typename Real>
BasicTensor<Real> slice(const BasicTensor<Real>& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto s = detail::split_at(a.shape(), axis);
  if (length == 0 || start + length > s.extent) throw ShapeError("slice: range out of bounds");
  Shape shape = a.shape();
  shape[axis] = length;
  std::vector<Real> out(s.outer * length * s.inner);
  const auto& v = a.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(v.begin() + static_cast<long>((o * s.extent + start) * s.inner), length * s.inner,
                out.begin() + static_cast<long>(o * length * s.inner));
  return BasicTensor<Real>::make_result("slice", std::move(shape), std::move(out), {&a},
                                        [s, start, length](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          for (std::size_t o = 0; o < s.outer; ++o)
                                            for (std::size_t j = 0; j < length * s.inner; ++j)
                                              pg[0][(o * s.extent + start) * s.inner + j] +=
                                                  g[o * length * s.inner + j];
                                        });
}

/// Joins tensors along `axis`; all other extents must agree.
template <typename Real>
BasicTensor<Real> concat(const TensorList<Real>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range");
  std::vector<std::size_t> extents;
  shape[axis] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    extents.push_back(probe[axis]);
    shape[axis] += probe[axis];
    probe[axis] = shape[axis];
    if (probe != shape) throw ShapeError("concat: extent mismatch off the join axis");
  }
  const auto s = detail::split_at(shape, axis);
  std::vector<Real> out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].values();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(v.begin() + static_cast<long>(o * extents[p] * s.inner), extents[p] * s.inner,
                  out.begin() + static_cast<long>((o * s.extent + offset) * s.inner));
    offset += extents[p];
  }
  std::vector<const BasicTensor<Real>*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return BasicTensor<Real>::make_result(
      "concat", std::move(shape), std::move(out), inputs,
      [s, extents](std::span<const Real> g, std::span<std::span<Real>> pg) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < extents.size(); ++p) {
          if (!pg[p].empty())
            for (std::size_t o = 0; o < s.outer; ++o)
              for (std::size_t j = 0; j < extents[p] * s.inner; ++j)
                pg[p][o * extents[p] * s.inner + j] += g[(o * s.extent + offset) * s.inner + j];
          offset += extents[p];
        }
      });
}

/// Gathers rows of a 2-D table: out[i, :] = table[indices[i], :].
template <typename Real>
BasicTensor<Real> index_rows(const BasicTensor<Real>& table, std::vector<std::size_t> indices) {
  if (table.rank() != 2) throw ShapeError("index_rows: table must be 2-D");
  const std::size_t cols = table.dim(1);
  std::vector<Real> out(indices.size() * cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= table.dim(0)) throw ShapeError("index_rows: index out of range");
    std::copy_n(table.values().begin() + static_cast<long>(indices[i] * cols), cols,
                out.begin() + static_cast<long>(i * cols));
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(indices));
  return BasicTensor<Real>::make_result("index_rows", Shape{idx->size(), cols}, std::move(out), {&table},
                                        [idx, cols](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          for (std::size_t i = 0; i < idx->size(); ++i)
                                            for (std::size_t c = 0; c < cols; ++c)
                                              pg[0][(*idx)[i] * cols + c] += g[i * cols + c];
                                        });
}

/// Numerically stable softmax along `axis` (max-subtracted). Entries equal
/// to -inf receive exactly zero weight.
template <typename Real>
BasicTensor<Real> softmax(const BasicTensor<Real>& x, std::size_t axis) {
  const auto s = detail::split_at(x.shape(), axis);
  const auto& v = x.values();
  std::vector<Real> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t i = 0; i < s.extent; ++i) mx = std::max(mx, v[base + i * s.inner]);
      Real total = 0;
      for (std::size_t i = 0; i < s.extent; ++i) {
        Real e = std::exp(v[base + i * s.inner] - mx);
        out[base + i * s.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < s.extent; ++i) out[base + i * s.inner] /= total;
    }
  auto y = std::make_shared<const std::vector<Real>>(out);
  return BasicTensor<Real>::make_result("softmax", x.shape(), std::move(out), {&x},
                                        [y, s](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          for (std::size_t o = 0; o < s.outer; ++o)
                                            for (std::size_t in = 0; in < s.inner; ++in) {
                                              const std::size_t base = o * s.extent * s.inner + in;
                                              Real dot = 0;
                                              for (std::size_t i = 0; i < s.extent; ++i)
                                                dot += g[base + i * s.inner] * (*y)[base + i * s.inner];
                                              for (std::size_t i = 0; i < s.extent; ++i) {
                                                const std::size_t j = base + i * s.inner;
                                                pg[0][j] += (*y)[j] * (g[j] - dot);
                                              }
                                            }
                                        });
}

/// Normalizes over the last axis then applies gamma * xhat + beta.
template <typename Real>
BasicTensor<Real> layer_norm(const BasicTensor<Real>& x, const BasicTensor<Real>& gamma,
                             const BasicTensor<Real>& beta, Real eps = Real(1e-5)) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t c = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw ShapeError("layer_norm: gamma/beta must have shape [" + std::to_string(c) + "]");
  const std::size_t rows = x.size() / c;
  const auto& v = x.values();
  auto xhat = std::make_shared<std::vector<Real>>(x.size());
  auto rstd = std::make_shared<std::vector<Real>>(rows);
  std::vector<Real> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = v.data() + r * c;
    Real mu = 0;
    for (std::size_t i = 0; i < c; ++i) mu += row[i];
    mu /= static_cast<Real>(c);
    Real var = 0;
    for (std::size_t i = 0; i < c; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<Real>(c);
    const Real rs = Real(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t i = 0; i < c; ++i) {
      const Real h = (row[i] - mu) * rs;
      (*xhat)[r * c + i] = h;
      out[r * c + i] = gamma[i] * h + beta[i];
    }
  }
  auto gs = gamma.storage();
  return BasicTensor<Real>::make_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [xhat, rstd, gs, rows, c](std::span<const Real> g, std::span<std::span<Real>> pg) {
        std::vector<Real> dxhat(c);
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* gr = g.data() + r * c;
          const Real* hr = xhat->data() + r * c;
          if (!pg[1].empty())
            for (std::size_t i = 0; i < c; ++i) pg[1][i] += gr[i] * hr[i];
          if (!pg[2].empty())
            for (std::size_t i = 0; i < c; ++i) pg[2][i] += gr[i];
          if (pg[0].empty()) continue;
          Real mean_d = 0, mean_dh = 0;
          for (std::size_t i = 0; i < c; ++i) {
            dxhat[i] = gr[i] * (*gs)[i];
            mean_d += dxhat[i];
            mean_dh += dxhat[i] * hr[i];
          }
          mean_d /= static_cast<Real>(c);
          mean_dh /= static_cast<Real>(c);
          for (std::size_t i = 0; i < c; ++i) pg[0][r * c + i] += (*rstd)[r] * (dxhat[i] - mean_d - hr[i] * mean_dh);
        }
      });
}

/// Exact GELU, x * Phi(x) with the erf form of the normal CDF.
template <typename Real>
BasicTensor<Real> gelu(const BasicTensor<Real>& x) {
  const Real inv_sqrt2 = Real(1) / std::numbers::sqrt2_v<Real>;
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * Real(0.5) * (Real(1) + std::erf(x[i] * inv_sqrt2));
  auto xs = x.storage();
  return BasicTensor<Real>::make_result("gelu", x.shape(), std::move(out), {&x},
                                        [xs, inv_sqrt2](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          const Real inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<Real>;
                                          for (std::size_t i = 0; i < g.size(); ++i) {
                                            const Real v = (*xs)[i];
                                            const Real cdf = Real(0.5) * (Real(1) + std::erf(v * inv_sqrt2));
                                            const Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * v * v);
                                            pg[0][i] += g[i] * (cdf + v * pdf);
                                          }
                                        });
}

template <typename Real>
Real sigmoid_value(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

template <typename Real>
BasicTensor<Real> sigmoid(const BasicTensor<Real>& x) {
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(x[i]);
  auto y = std::make_shared<const std::vector<Real>>(out);
  return BasicTensor<Real>::make_result("sigmoid", x.shape(), std::move(out), {&x},
                                        [y](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          for (std::size_t i = 0; i < g.size(); ++i)
                                            pg[0][i] += g[i] * (*y)[i] * (Real(1) - (*y)[i]);
                                        });
}

template <typename Real>
BasicTensor<Real> sum(const BasicTensor<Real>& x) {
  Real total = 0;
  for (auto v : x.values()) total += v;
  return BasicTensor<Real>::make_result("sum", Shape{}, std::vector<Real>{total}, {&x},
                                        [](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          for (auto& d : pg[0]) d += g[0];
                                        });
}

template <typename Real>
BasicTensor<Real> mean(const BasicTensor<Real>& x) {
  return scale(sum(x), Real(1) / static_cast<Real>(x.size()));
}

/// Mean over one axis; the axis is removed from the result.
template <typename Real>
BasicTensor<Real> mean_axis(const BasicTensor<Real>& x, std::size_t axis) {
  const auto s = detail::split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<long>(axis));
  std::vector<Real> out(s.outer * s.inner, Real(0));
  const auto& v = x.values();
  const Real inv = Real(1) / static_cast<Real>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.extent; ++i)
      for (std::size_t j = 0; j < s.inner; ++j) out[o * s.inner + j] += v[(o * s.extent + i) * s.inner + j];
  for (auto& e : out) e *= inv;
  return BasicTensor<Real>::make_result("mean_axis", std::move(shape), std::move(out), {&x},
                                        [s, inv](std::span<const Real> g, std::span<std::span<Real>> pg) {
                                          for (std::size_t o = 0; o < s.outer; ++o)
                                            for (std::size_t i = 0; i < s.extent; ++i)
                                              for (std::size_t j = 0; j < s.inner; ++j)
                                                pg[0][(o * s.extent + i) * s.inner + j] += g[o * s.inner + j] * inv;
                                        });
}

/// Mean binary cross-entropy on logits over every element, in the
/// log-sum-exp safe form. `pos_weight`, when given, has one entry per class
/// (last axis) and scales the positive term.
template <typename Real>
BasicTensor<Real> bce_with_logits(const BasicTensor<Real>& logits, const BasicTensor<Real>& targets,
                                  std::span<const std::type_identity_t<Real>> pos_weight = {}) {
  if (logits.shape() != targets.shape())
    throw ShapeError("bce_with_logits: shape mismatch " + shape_str(logits.shape()) + " vs " +
                     shape_str(targets.shape()));
  const std::size_t classes = logits.rank() ? logits.dim(logits.rank() - 1) : 1;
  if (!pos_weight.empty() && pos_weight.size() != classes)
    throw ShapeError("bce_with_logits: pos_weight must have one entry per class");
  for (auto t : targets.values())
    if (t != Real(0) && t != Real(1)) throw ValidationError("bce_with_logits: targets must be 0 or 1");
  auto weights = std::make_shared<std::vector<Real>>(pos_weight.begin(), pos_weight.end());
  const std::size_t n = logits.size();
  Real total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real x = logits[i], t = targets[i];
    const Real w = weights->empty() ? Real(1) : (*weights)[i % classes];
    // softplus(-x) = log1p(exp(-|x|)) + max(-x, 0)
    const Real sp_neg = std::log1p(std::exp(-std::abs(x))) + std::max(-x, Real(0));
    total += (Real(1) - t) * x + (Real(1) + (w - Real(1)) * t) * sp_neg;
  }
  auto xs = logits.storage();
  auto ts = targets.storage();
  return BasicTensor<Real>::make_result(
      "bce_with_logits", Shape{}, std::vector<Real>{total / static_cast<Real>(n)}, {&logits},
      [xs, ts, weights, classes, n](std::span<const Real> g, std::span<std::span<Real>> pg) {
        const Real k = g[0] / static_cast<Real>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const Real t = (*ts)[i];
          const Real w = weights->empty() ? Real(1) : (*weights)[i % classes];
          pg[0][i] += k * ((Real(1) - t) - (Real(1) + (w - Real(1)) * t) * sigmoid_value(-(*xs)[i]));
        }
      });
}

template <typename Real>
bool all_finite(const BasicTensor<Real>& x) {
  for (auto v : x.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace aupipe

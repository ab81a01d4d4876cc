#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "aupipe/tensor/ops.hpp"

namespace aupipe {

/// [H, W, C] grid -> [num_windows, M*M, C]. Windows are tiled row-major and
/// tokens inside a window are row-major as well.
template <typename Real>
BasicTensor<Real> window_partition(const BasicTensor<Real>& grid, std::size_t m) {
  if (grid.rank() != 3) throw ShapeError("window_partition: expected [H, W, C] grid");
  const std::size_t h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
  if (m == 0 || h % m || w % m)
    throw ShapeError("window_partition: grid " + shape_str(grid.shape()) + " not divisible by window " +
                     std::to_string(m));
  auto x = reshape(grid, {h / m, m, w / m, m, c});
  x = permute(x, {0, 2, 1, 3, 4});
  return reshape(x, {(h / m) * (w / m), m * m, c});
}

/// Inverse of window_partition.
template <typename Real>
BasicTensor<Real> window_reverse(const BasicTensor<Real>& windows, std::size_t m, std::size_t h, std::size_t w) {
  if (windows.rank() != 3 || m == 0 || h % m || w % m || windows.dim(0) != (h / m) * (w / m) ||
      windows.dim(1) != m * m)
    throw ShapeError("window_reverse: windows " + shape_str(windows.shape()) + " do not tile a " +
                     std::to_string(h) + "x" + std::to_string(w) + " grid");
  const std::size_t c = windows.dim(2);
  auto x = reshape(windows, {h / m, w / m, m, m, c});
  x = permute(x, {0, 2, 1, 3, 4});
  return reshape(x, {h, w, c});
}

/// Additive masks [num_windows, M*M, M*M] for attention over a grid that
/// was cyclically shifted by (-s, -s). Token pairs that came from different
/// contiguous regions of the unshifted grid get -inf; everything else 0.
template <typename Real = double>
BasicTensor<Real> build_shift_mask(std::size_t h, std::size_t w, std::size_t m, std::size_t s) {
  if (m == 0 || h % m || w % m) throw ShapeError("build_shift_mask: grid not divisible by window");
  if (s >= m) throw ShapeError("build_shift_mask: shift must be smaller than the window");
  const std::size_t nw = (h / m) * (w / m), n = m * m;
  std::vector<Real> mask(nw * n * n, Real(0));
  if (s == 0) return BasicTensor<Real>(Shape{nw, n, n}, std::move(mask));
  // Region label per shifted-grid cell: slices [0, H-M), [H-M, H-s), [H-s, H) per axis.
  auto band = [m, s](std::size_t i, std::size_t extent) -> std::size_t {
    if (i < extent - m) return 0;
    if (i < extent - s) return 1;
    return 2;
  };
  const Real neg_inf = -std::numeric_limits<Real>::infinity();
  for (std::size_t wr = 0; wr < h / m; ++wr)
    for (std::size_t wc = 0; wc < w / m; ++wc) {
      const std::size_t win = wr * (w / m) + wc;
      std::vector<std::size_t> label(n);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < m; ++c) label[r * m + c] = band(wr * m + r, h) * 3 + band(wc * m + c, w);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (label[i] != label[j]) mask[(win * n + i) * n + j] = neg_inf;
    }
  return BasicTensor<Real>(Shape{nw, n, n}, std::move(mask));
}

/// Row index into a (2M-1)^2 bias table for every (query, key) slot pair of
/// an M x M window.
inline std::vector<std::size_t> relative_position_index(std::size_t m) {
  const std::size_t n = m * m, span = 2 * m - 1;
  std::vector<std::size_t> idx(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t dr = (i / m) + (m - 1) - (j / m);
      const std::size_t dc = (i % m) + (m - 1) - (j % m);
      idx[i * n + j] = dr * span + dc;
    }
  return idx;
}

template <typename Real>
struct AttentionWeights {
  const BasicTensor<Real>& qkv_weight;
  const BasicTensor<Real>& qkv_bias;
  const BasicTensor<Real>& proj_weight;
  const BasicTensor<Real>& proj_bias;
  const BasicTensor<Real>* bias_table = nullptr;  // [(2M-1)^2, heads], windowed mode only
};

template <typename Real>
BasicTensor<Real> linear(const BasicTensor<Real>& x, const BasicTensor<Real>& w, const BasicTensor<Real>& b) {
  return add(matmul(x, w), b);
}

/// Multi-head self-attention inside each window of [num_windows, N, C]:
/// softmax(Q K^T / sqrt(d) + relative_bias + mask) V, then the output
/// projection. `mask`, when given, is [num_windows, N, N]. `probabilities`,
/// when given, receives the attention weights [num_windows, heads, N, N].
template <typename Real>
BasicTensor<Real> window_attention(const BasicTensor<Real>& windows, const AttentionWeights<Real>& wts,
                                   std::size_t heads, const BasicTensor<Real>* mask = nullptr,
                                   BasicTensor<Real>* probabilities = nullptr) {
  if (windows.rank() != 3) throw ShapeError("window_attention: expected [windows, N, C]");
  const std::size_t nw = windows.dim(0), n = windows.dim(1), c = windows.dim(2);
  if (heads == 0 || c % heads) throw ShapeError("window_attention: width not divisible by heads");
  const std::size_t d = c / heads;
  auto qkv = linear(reshape(windows, {nw * n, c}), wts.qkv_weight, wts.qkv_bias);
  qkv = permute(reshape(qkv, {nw, n, 3, heads, d}), {2, 0, 3, 1, 4});  // [3, nw, heads, n, d]
  auto q = scale(reshape(slice(qkv, 0, 0, 1), {nw, heads, n, d}), Real(1) / std::sqrt(static_cast<Real>(d)));
  auto k = reshape(slice(qkv, 0, 1, 1), {nw, heads, n, d});
  auto v = reshape(slice(qkv, 0, 2, 1), {nw, heads, n, d});
  auto scores = bmm(q, transpose_last(k));  // [nw, heads, n, n]
  if (wts.bias_table) {
    const std::size_t m = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
    if (m * m != n || wts.bias_table->dim(0) != (2 * m - 1) * (2 * m - 1) || wts.bias_table->dim(1) != heads)
      throw ShapeError("window_attention: bias table does not match window");
    auto rel = index_rows(*wts.bias_table, relative_position_index(m));  // [n*n, heads]
    rel = permute(reshape(rel, {n, n, heads}), {2, 0, 1});                // [heads, n, n]
    scores = add(scores, rel);
  }
  if (mask) {
    if (mask->shape() != Shape{nw, n, n}) throw ShapeError("window_attention: mask shape mismatch");
    std::vector<Real> expanded(nw * heads * n * n);
    for (std::size_t w = 0; w < nw; ++w)
      for (std::size_t hd = 0; hd < heads; ++hd)
        std::copy_n(mask->values().begin() + static_cast<long>(w * n * n), n * n,
                    expanded.begin() + static_cast<long>((w * heads + hd) * n * n));
    scores = add(scores, BasicTensor<Real>(scores.shape(), std::move(expanded)));
  }
  auto attn = softmax(scores, 3);
  if (probabilities) *probabilities = attn.detach();
  auto out = bmm(attn, v);                                                  // [nw, heads, n, d]
  out = reshape(permute(out, {0, 2, 1, 3}), {nw * n, c});
  out = linear(out, wts.proj_weight, wts.proj_bias);
  if (!all_finite(out)) throw NumericError("window_attention: non-finite attention output");
  return reshape(out, {nw, n, c});
}

/// Global multi-head self-attention over all tokens [N, C]. No windows, no
/// shift, no relative bias: the reference path for window_attention.
template <typename Real>
BasicTensor<Real> full_attention(const BasicTensor<Real>& tokens, const AttentionWeights<Real>& wts,
                                 std::size_t heads) {
  if (tokens.rank() != 2) throw ShapeError("full_attention: expected [N, C]");
  const std::size_t n = tokens.dim(0), c = tokens.dim(1);
  if (heads == 0 || c % heads) throw ShapeError("full_attention: width not divisible by heads");
  const std::size_t d = c / heads;
  auto qkv = linear(tokens, wts.qkv_weight, wts.qkv_bias);  // [n, 3c]
  auto per_head = [&](std::size_t which) {
    // columns [which*c, (which+1)*c) split into heads -> [heads, n, d]
    return permute(reshape(slice(qkv, 1, which * c, c), {n, heads, d}), {1, 0, 2});
  };
  auto q = scale(per_head(0), Real(1) / std::sqrt(static_cast<Real>(d)));
  auto k = per_head(1);
  auto v = per_head(2);
  auto attn = softmax(bmm(q, transpose_last(k)), 2);  // [heads, n, n]
  auto out = reshape(permute(bmm(attn, v), {1, 0, 2}), {n, c});
  out = linear(out, wts.proj_weight, wts.proj_bias);
  if (!all_finite(out)) throw NumericError("full_attention: non-finite attention output");
  return out;
}

/// Attention over M x M windows of an [H, W, C] grid that is first rolled by
/// (-s, -s) and rolled back afterwards. Pairs that wrapped around the border
/// are masked out when s > 0.
template <typename Real>
BasicTensor<Real> shifted_window_attention(const BasicTensor<Real>& grid, const AttentionWeights<Real>& wts,
                                           std::size_t heads, std::size_t m, std::size_t s,
                                           BasicTensor<Real>* probabilities = nullptr) {
  if (grid.rank() != 3) throw ShapeError("shifted_window_attention: expected [H, W, C] grid");
  const std::size_t h = grid.dim(0), w = grid.dim(1);
  const long shift = static_cast<long>(s);
  auto x = s ? roll(roll(grid, -shift, 0), -shift, 1) : grid;
  auto windows = window_partition(x, m);
  if (s) {
    const auto mask = build_shift_mask<Real>(h, w, m, s);
    windows = window_attention(windows, wts, heads, &mask, probabilities);
  } else {
    windows = window_attention(windows, wts, heads, static_cast<const BasicTensor<Real>*>(nullptr), probabilities);
  }
  x = window_reverse(windows, m, h, w);
  return s ? roll(roll(x, shift, 0), shift, 1) : x;
}

}  // namespace aupipe

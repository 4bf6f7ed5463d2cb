#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "affect/tensor.hpp"

// Differentiable operations. Every function records a backward closure when
// any input requires grad and recording is enabled.
namespace affect::ops {

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);

// x[r×n] + bias[1×n] on every row.
template <typename T> Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias);
// Stack `reps` copies of x vertically.
template <typename T> Tensor<T> tile_rows(const Tensor<T>& x, std::size_t reps);

template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);
template <typename T> Tensor<T> log_softmax_rows(const Tensor<T>& x);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> softplus(const Tensor<T>& x);

/// Kernel-size-1 convolution over the patch axis: x[p×c_in]·w[c_in×c_out] + b.
template <typename T>
Tensor<T> pointwise_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T> Tensor<T> concat_rows(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t row0, std::size_t nrows, std::size_t col0,
                std::size_t ncols);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t row0, std::size_t nrows) {
  return slice(x, row0, nrows, 0, x.cols());
}
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t col0, std::size_t ncols) {
  return slice(x, 0, x.rows(), col0, ncols);
}
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// Per-row sum: [r×n] -> [r×1].
template <typename T> Tensor<T> row_sum(const Tensor<T>& x);

/// Applies a[n×n] to each consecutive n-row group of h[(g·n)×d].
template <typename T> Tensor<T> grouped_matmul(const Tensor<T>& a, const Tensor<T>& h);

/// Multi-head scaled dot-product attention over `batch` independent samples.
/// q is (B·nq)×d, k and v are (B·nk)×d; head h reads columns
/// [h·d/heads, (h+1)·d/heads). The result is (B·nq)×d with the heads side by
/// side. `weights`, when given, receives the softmax matrices as [b][h][nq][nk].
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t batch,
                    std::size_t heads, std::vector<T>* weights = nullptr);

/// Attention whose keys and values are linear maps of per-sample feature rows,
/// computed without materializing them:
///   attention(q, fk·wk, fv·wv + bv) == projected_attention(q, fk, wk, fv, wv, bv)
/// Scores use (q_h·wk_hᵀ)·fkᵀ, outputs (P_h·fv)·wv_h + bv_h; rows of P sum to one.
/// A key bias would shift each score row by a constant, so there is none.
/// q is (B·nq)×d, fk and fv are (B·nk)×c, wk and wv are c×d, bv is 1×d.
template <typename T>
Tensor<T> projected_attention(const Tensor<T>& q, const Tensor<T>& fk, const Tensor<T>& wk,
                              const Tensor<T>& fv, const Tensor<T>& wv, const Tensor<T>& bv,
                              std::size_t batch, std::size_t heads,
                              std::vector<T>* weights = nullptr);

/// Concordance correlation coefficient of two equal-size tensors (flattened),
/// biased moments, `eps` added to the denominator. Returns 1×1.
template <typename T> Tensor<T> ccc(const Tensor<T>& x, const Tensor<T>& y, T eps);

}  // namespace affect::ops

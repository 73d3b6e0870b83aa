#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mssm/tensor.hpp"

// Differentiable primitives. Activations use a channels x columns layout:
// a batch of S sequences of length T is a [C x S*T] matrix whose columns are
// grouped per sequence, so sequence-aware ops take the sequence length.
namespace mssm::ops {

/// [m x k] * [k x n] -> [m x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

// Binary ops accept equal shapes, or a `b` whose shape is a leading prefix of
// a's shape; b is then repeated along a's trailing axes (a per-channel bias
// against a [C x n] activation, or a scalar of shape []).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> neg(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
template <typename T>
Tensor<T> log(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);
/// log(1 + e^x), returning x itself for x > 30.
template <typename T>
Tensor<T> softplus(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

/// Causal depthwise convolution per channel and per sequence:
/// y[c,t] = sum_k kernel[c,k] * x[c, t-K+1+k] + bias[c], zero-padded on the left.
/// `seq_len` of 0 means one sequence spanning all columns.
template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                           std::size_t seq_len = 0);

/// Row softmax with max subtraction. With `causal`, entries j > i are
/// excluded and come out as exactly 0 (requires a square input).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, bool causal);

/// Zeroes the strictly upper triangle of a square matrix.
template <typename T>
Tensor<T> causal_mask(const Tensor<T>& x);

/// Per-column RMS normalization over the channel axis, scaled by `weight`.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& weight, T eps = T(1e-5));

/// Gathers rows of a [V x D] table into a [D x n] activation.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits` [n x V], over rows whose mask flag is set.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> mask);

// Scalar helpers shared with the inference path.
template <typename T>
T softplus_value(T x);
template <typename T>
T sigmoid_value(T x);

}  // namespace mssm::ops

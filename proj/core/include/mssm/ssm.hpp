#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mssm/tensor.hpp"

// Selective state-space layer math.
//
// Shapes follow the channels x time convention: an input X is [E x T] for E
// channels. The decay A = -exp(A_log) is either one value per (channel,
// state) pair (Mamba-1) or one scalar per head shared by `head_dim`
// consecutive channels and all state entries (Mamba-2).
namespace mssm {

enum class DecayKind { per_channel, per_head };

/// Default low rank of the step-size projection: max(1, ceil(d / 16)).
std::size_t default_delta_rank(std::size_t d);

/// Learnable symbols of one selective SSM layer.
///
/// `w_b`, `w_c` and `w_delta_down` read the projection input (the SSM input
/// itself for Mamba-1, the block input for Mamba-2). The step-size projection
/// is factored as w_delta_up * w_delta_down with G = E (per_channel) or
/// G = H (per_head) outputs.
template <typename T>
struct SsmLayerParams {
  DecayKind kind = DecayKind::per_channel;
  std::size_t head_dim = 0;  // per_head only
  Tensor<T> a_log;           // [E x N] or [H]
  Tensor<T> w_b;             // [N x P]
  Tensor<T> w_c;             // [N x P]
  Tensor<T> w_delta_down;    // [r x P]
  Tensor<T> w_delta_up;      // [G x r]
  Tensor<T> b_delta;         // [G]
  Tensor<T> conv_kernel;     // [channels x K], undefined when the layer has no conv
  Tensor<T> conv_bias;       // [channels]

  std::size_t state_size() const { return w_b.rows(); }
  std::size_t groups() const { return b_delta.numel(); }
  /// Scan channel count E.
  std::size_t channels() const {
    return kind == DecayKind::per_channel ? a_log.rows() : a_log.numel() * head_dim;
  }
};

/// Discretized parameters of one sequence.
template <typename T>
struct DiscretizedState {
  DecayKind kind = DecayKind::per_channel;
  std::size_t channels = 0;  // E
  std::size_t state = 0;     // N
  std::size_t length = 0;    // T
  std::size_t head_dim = 1;  // channels per decay group (1 for per_channel)
  Tensor<T> delta;           // [G x T], positive
  Tensor<T> a_bar;           // [E x N x T] (per_channel) or [H x T] (per_head)
  Tensor<T> b;               // [N x T]
  Tensor<T> c;               // [N x T]

  std::size_t groups() const { return delta.rows(); }
  std::size_t group_of(std::size_t d) const { return d / head_dim; }
  T a_bar_at(std::size_t d, std::size_t n, std::size_t t) const;
  /// B-bar entry for channel d: b[n, t] * delta[group(d), t].
  T b_bar_at(std::size_t d, std::size_t n, std::size_t t) const {
    return b(n, t) * delta(group_of(d), t);
  }
};

/// Builds the discretized state from already-computed streams. `delta` is
/// the positive step size [G x T]; `a_log` holds the continuous decay
/// parameters.
template <typename T>
DiscretizedState<T> discretize(DecayKind kind, std::size_t head_dim, const Tensor<T>& delta,
                               const Tensor<T>& a_log, const Tensor<T>& b, const Tensor<T>& c);

/// delta = softplus(W_up W_down X + b_delta), B = W_B X, C = W_C X,
/// A-bar = exp(A delta). X is the projection input [P x T].
template <typename T>
DiscretizedState<T> project_params(const SsmLayerParams<T>& params, const Tensor<T>& x);

/// Sequential recurrence h_t = A-bar_t h_{t-1} + B-bar_t x_t, y_t = C_t . h_t
/// with h_0 = 0, per channel. X is [E x T].
template <typename T>
Tensor<T> selective_scan(const DiscretizedState<T>& state, const Tensor<T>& x);

/// Default length cap for the quadratic matrix form.
inline constexpr std::size_t kMatrixFormCap = 512;

/// M[i,j] = C_i . (prod_{k=j+1..i} A-bar_k) B-bar_j for j <= i, else 0.
template <typename T>
Tensor<T> materialize_attention_matrix(const DiscretizedState<T>& state, std::size_t channel,
                                       std::size_t cap = kMatrixFormCap);

/// Entry-wise mean of per-channel maps.
template <typename T>
Tensor<T> averaged_attention_map(std::span<const Tensor<T>> maps);

/// Channel-averaged map of a state. Channels of one head share a map, so the
/// per_head case materializes one matrix per head.
template <typename T>
Tensor<T> averaged_attention_map(const DiscretizedState<T>& state, std::size_t cap = kMatrixFormCap);

/// (1 / (E N)) sum_{d,n} prod_{k=j+1..i} A-bar[d,n,k] for j <= i, else 0.
template <typename T>
Tensor<T> averaged_attention_mask(const DiscretizedState<T>& state, std::size_t cap = kMatrixFormCap);

/// Causal linear-attention scores S[i,j] = (W_C x_i) . (W_B x_j) for j <= i.
template <typename T>
Tensor<T> linear_attention_scores(const Tensor<T>& x, const Tensor<T>& w_b, const Tensor<T>& w_c);

/// Y = X * CausalMask(X^T W_C^T W_B X)^T, i.e. y_i = sum_{j<=i} S[i,j] x_j.
template <typename T>
Tensor<T> linear_attention_reference(const Tensor<T>& x, const Tensor<T>& w_b, const Tensor<T>& w_c);

namespace ops {

/// Differentiable fused selective scan over a batch of sequences.
///
/// x [E x n], delta [G x n] (post-softplus), a_log [E x N] or [H],
/// b and c [N x n], with n a multiple of `seq_len`. Gradients reach x, delta,
/// a_log, b and c.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a_log,
                         const Tensor<T>& b, const Tensor<T>& c, std::size_t seq_len, DecayKind kind);

}  // namespace ops

}  // namespace mssm

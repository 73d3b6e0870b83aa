#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mssm/ssm.hpp"
#include "mssm/tensor.hpp"

namespace mssm {

enum class Variant { mamba1, mamba2, hybrid, linear_attn_hybrid };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::mamba2;
  /// SSM flavour used by the non-attention layers of hybrid variants.
  Variant ssm_variant = Variant::mamba2;
  int n_layers = 2;
  int d_model = 64;
  int d_state = 16;
  int n_heads = 0;  // 0 = derived as expand * d_model / head_dim (Mamba-2)
  int head_dim = 64;
  int expand = 2;
  int conv_width = 4;  // 0 disables the convolution
  int vocab_size = 0;
  std::optional<int> attn_layer_index;
  int lin_attn_head_dim = 0;  // 0 = d_state
  int delta_rank = 0;         // 0 = default_delta_rank(projection input)
  bool tie_embeddings = false;
  /// Mamba-2 blocks apply RMSNorm to the gated SSM output before W3.
  bool mamba2_out_norm = true;

  int expanded() const { return expand * d_model; }
  int heads() const;
  /// Mamba flavour of layer i (mamba1 or mamba2), or the attention kind for
  /// the hybrid slot.
  Variant layer_kind(int layer) const;
  /// Throws ConfigError naming the offending field.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j, const std::string& prefix = "model");
};

/// Pre-norm Mamba block: W3 {SSM[silu(conv(W1 u))] * silu(W2 u)} + X, with
/// u = RMSNorm(X). Mamba-2 reads B, C and delta from u, convolves [x; B; C]
/// together and, when out_norm is defined, normalizes the gated product.
template <typename T>
struct MambaBlock {
  DecayKind kind = DecayKind::per_channel;
  Tensor<T> norm;   // [D]
  Tensor<T> w_x;    // [E x D] (W1)
  Tensor<T> w_z;    // [E x D] (W2)
  Tensor<T> w_out;  // [D x E] (W3)
  Tensor<T> out_norm;  // [E], Mamba-2 only
  SsmLayerParams<T> ssm;
};

/// Single-head causal softmax attention with residual, no position encoding.
template <typename T>
struct AttentionLayer {
  Tensor<T> norm, w_q, w_k, w_v, w_o;
};

/// Unnormalized causal linear attention without value/output projections:
/// y_i = x_i + sum_{j<=i} (W_C u_i . W_B u_j) u_j, u = RMSNorm(x).
template <typename T>
struct LinearAttentionLayer {
  Tensor<T> norm, w_b, w_c;
};

template <typename T>
using Layer = std::variant<MambaBlock<T>, AttentionLayer<T>, LinearAttentionLayer<T>>;

/// Equal-length token sequences stored back to back.
struct TokenBatch {
  std::vector<int> ids;
  std::size_t seq_len = 0;

  std::size_t batch() const { return seq_len == 0 ? 0 : ids.size() / seq_len; }
};

/// Per-layer intermediate streams recorded during a forward pass.
template <typename T>
struct LayerCapture {
  int layer = 0;
  std::string kind;  // "mamba1", "mamba2", "attention", "linear_attention"
  DecayKind decay = DecayKind::per_channel;
  std::size_t head_dim = 1;
  Tensor<T> x;       // SSM input [E x n]
  Tensor<T> delta;   // [G x n]
  Tensor<T> a_log;
  Tensor<T> b, c;    // [N x n]
  std::vector<Tensor<T>> weights;  // attention layers: one [T x T] map per sequence
};

template <typename T>
struct ForwardCapture {
  std::vector<LayerCapture<T>> layers;
};

template <typename T>
class Model {
 public:
  Model() = default;
  /// Allocates all parameters (zero-filled, norms at one). Call one of the
  /// initializers in init.hpp before training.
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  /// tokens -> logits [n x vocab], n = batch * seq_len.
  Tensor<T> forward(const TokenBatch& tokens, ForwardCapture<T>* capture = nullptr) const;

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  Tensor<T> embedding;
  std::vector<Layer<T>> layers;
  Tensor<T> final_norm;
  Tensor<T> head;  // [D x vocab]; unused when embeddings are tied

 private:
  ModelConfig config_;
};

}  // namespace mssm

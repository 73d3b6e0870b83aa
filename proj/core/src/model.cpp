#include "mssm/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "mssm/error.hpp"
#include "mssm/ops.hpp"

namespace mssm {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::mamba1: return "mamba1";
    case Variant::mamba2: return "mamba2";
    case Variant::hybrid: return "hybrid";
    case Variant::linear_attn_hybrid: return "linear-attn-hybrid";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& name) {
  if (name == "mamba1") return Variant::mamba1;
  if (name == "mamba2") return Variant::mamba2;
  if (name == "hybrid") return Variant::hybrid;
  if (name == "linear-attn-hybrid") return Variant::linear_attn_hybrid;
  throw ConfigError("variant", "unknown model variant '" + name + "'");
}

int ModelConfig::heads() const { return n_heads > 0 ? n_heads : (head_dim > 0 ? expanded() / head_dim : 0); }

Variant ModelConfig::layer_kind(int layer) const {
  if (variant == Variant::mamba1 || variant == Variant::mamba2) return variant;
  if (attn_layer_index && layer == *attn_layer_index) return variant;
  return ssm_variant;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw ConfigError(std::string("model.") + field, "must be at least 1, got " + std::to_string(v));
  };
  positive(n_layers, "n_layers");
  positive(d_model, "d_model");
  positive(d_state, "d_state");
  positive(expand, "expand");
  if (conv_width < 0) throw ConfigError("model.conv_width", "must be non-negative");
  if (vocab_size < 2) throw ConfigError("model.vocab_size", "must be at least 2, got " + std::to_string(vocab_size));
  if (delta_rank < 0) throw ConfigError("model.delta_rank", "must be non-negative");
  if (lin_attn_head_dim < 0) throw ConfigError("model.lin_attn_head_dim", "must be non-negative");
  const bool hybrid = variant == Variant::hybrid || variant == Variant::linear_attn_hybrid;
  if (hybrid) {
    if (!attn_layer_index) throw ConfigError("model.attn_layer_index", "required for hybrid variants");
    if (*attn_layer_index < 0 || *attn_layer_index >= n_layers) {
      throw ConfigError("model.attn_layer_index", "must lie in [0, n_layers), got " + std::to_string(*attn_layer_index));
    }
    if (ssm_variant != Variant::mamba1 && ssm_variant != Variant::mamba2) {
      throw ConfigError("model.ssm_variant", "must be mamba1 or mamba2");
    }
  }
  bool uses_mamba2 = false;
  for (int i = 0; i < n_layers; ++i) uses_mamba2 = uses_mamba2 || layer_kind(i) == Variant::mamba2;
  if (uses_mamba2) {
    positive(head_dim, "head_dim");
    if (expanded() % head_dim != 0) {
      throw ConfigError("model.head_dim", "expand * d_model = " + std::to_string(expanded()) +
                                              " is not divisible by head_dim " + std::to_string(head_dim));
    }
    if (n_heads != 0 && n_heads != expanded() / head_dim) {
      throw ConfigError("model.n_heads", "must equal expand * d_model / head_dim = " +
                                             std::to_string(expanded() / head_dim));
    }
  }
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j;
  j["variant"] = to_string(variant);
  j["ssm_variant"] = to_string(ssm_variant);
  j["n_layers"] = n_layers;
  j["d_model"] = d_model;
  j["d_state"] = d_state;
  j["n_heads"] = n_heads;
  j["head_dim"] = head_dim;
  j["expand"] = expand;
  j["conv_width"] = conv_width;
  j["vocab_size"] = vocab_size;
  j["attn_layer_index"] = attn_layer_index ? nlohmann::json(*attn_layer_index) : nlohmann::json(nullptr);
  j["lin_attn_head_dim"] = lin_attn_head_dim;
  j["delta_rank"] = delta_rank;
  j["tie_embeddings"] = tie_embeddings;
  j["mamba2_out_norm"] = mamba2_out_norm;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j, const std::string& prefix) {
  using detail::optional_or;
  using detail::required;
  ModelConfig c;
  try {
    c.variant = variant_from_string(required<std::string>(j, prefix, "variant"));
    c.ssm_variant = variant_from_string(optional_or<std::string>(j, prefix, "ssm_variant", "mamba2"));
  } catch (const ConfigError& e) {
    if (e.field() == "variant") throw ConfigError(detail::join_key(prefix, "variant"), e.what());
    throw;
  }
  c.n_layers = required<int>(j, prefix, "n_layers");
  c.d_model = required<int>(j, prefix, "d_model");
  c.d_state = optional_or<int>(j, prefix, "d_state", c.d_state);
  c.n_heads = optional_or<int>(j, prefix, "n_heads", c.n_heads);
  c.head_dim = optional_or<int>(j, prefix, "head_dim", c.head_dim);
  c.expand = optional_or<int>(j, prefix, "expand", c.expand);
  c.conv_width = optional_or<int>(j, prefix, "conv_width", c.conv_width);
  c.vocab_size = optional_or<int>(j, prefix, "vocab_size", c.vocab_size);
  if (j.contains("attn_layer_index") && !j["attn_layer_index"].is_null()) {
    c.attn_layer_index = required<int>(j, prefix, "attn_layer_index");
  }
  c.lin_attn_head_dim = optional_or<int>(j, prefix, "lin_attn_head_dim", c.lin_attn_head_dim);
  c.delta_rank = optional_or<int>(j, prefix, "delta_rank", c.delta_rank);
  c.tie_embeddings = optional_or<bool>(j, prefix, "tie_embeddings", c.tie_embeddings);
  c.mamba2_out_norm = optional_or<bool>(j, prefix, "mamba2_out_norm", c.mamba2_out_norm);
  return c;
}

namespace {

template <typename T>
Tensor<T> param(Shape shape, T fill = T(0)) {
  Tensor<T> t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
MambaBlock<T> make_mamba_block(const ModelConfig& cfg, Variant kind) {
  const auto D = static_cast<std::size_t>(cfg.d_model);
  const auto E = static_cast<std::size_t>(cfg.expanded());
  const auto N = static_cast<std::size_t>(cfg.d_state);
  const auto K = static_cast<std::size_t>(cfg.conv_width);
  MambaBlock<T> blk;
  blk.norm = param<T>({D}, T(1));
  blk.w_x = param<T>({E, D});
  blk.w_z = param<T>({E, D});
  blk.w_out = param<T>({D, E});
  auto& s = blk.ssm;
  if (kind == Variant::mamba1) {
    const std::size_t r = cfg.delta_rank > 0 ? static_cast<std::size_t>(cfg.delta_rank) : default_delta_rank(E);
    blk.kind = DecayKind::per_channel;
    s.kind = DecayKind::per_channel;
    s.a_log = param<T>({E, N});
    s.w_b = param<T>({N, E});
    s.w_c = param<T>({N, E});
    s.w_delta_down = param<T>({r, E});
    s.w_delta_up = param<T>({E, r});
    s.b_delta = param<T>({E});
    if (K > 0) {
      s.conv_kernel = param<T>({E, K});
      s.conv_bias = param<T>({E});
    }
  } else {
    const auto H = static_cast<std::size_t>(cfg.heads());
    const std::size_t r = cfg.delta_rank > 0 ? static_cast<std::size_t>(cfg.delta_rank) : default_delta_rank(D);
    blk.kind = DecayKind::per_head;
    s.kind = DecayKind::per_head;
    s.head_dim = E / H;
    s.a_log = param<T>({H});
    s.w_b = param<T>({N, D});
    s.w_c = param<T>({N, D});
    s.w_delta_down = param<T>({r, D});
    s.w_delta_up = param<T>({H, r});
    s.b_delta = param<T>({H});
    if (cfg.mamba2_out_norm) blk.out_norm = param<T>({E}, T(1));
    if (K > 0) {
      s.conv_kernel = param<T>({E + 2 * N, K});
      s.conv_bias = param<T>({E + 2 * N});
    }
  }
  return blk;
}

template <typename T>
Tensor<T> mamba_forward(const MambaBlock<T>& blk, const Tensor<T>& x, std::size_t seq_len,
                        LayerCapture<T>* cap) {
  const auto& s = blk.ssm;
  const Tensor<T> u = ops::rms_norm(x, blk.norm);
  const Tensor<T> xs = ops::matmul(blk.w_x, u);
  const Tensor<T> z = ops::matmul(blk.w_z, u);
  const bool has_conv = s.conv_kernel.defined();
  Tensor<T> xc, b, c, delta;
  if (blk.kind == DecayKind::per_channel) {
    xc = ops::silu(has_conv ? ops::depthwise_conv1d(xs, s.conv_kernel, s.conv_bias, seq_len) : xs);
    delta = ops::softplus(ops::add(ops::matmul(s.w_delta_up, ops::matmul(s.w_delta_down, xc)), s.b_delta));
    b = ops::matmul(s.w_b, xc);
    c = ops::matmul(s.w_c, xc);
  } else {
    const std::size_t E = xs.rows(), N = s.w_b.rows();
    const Tensor<T> b_raw = ops::matmul(s.w_b, u);
    const Tensor<T> c_raw = ops::matmul(s.w_c, u);
    if (has_conv) {
      const Tensor<T> xbc = ops::silu(ops::depthwise_conv1d(ops::concat_rows<T>({xs, b_raw, c_raw}), s.conv_kernel,
                                                            s.conv_bias, seq_len));
      xc = ops::slice_rows(xbc, 0, E);
      b = ops::slice_rows(xbc, E, N);
      c = ops::slice_rows(xbc, E + N, N);
    } else {
      xc = ops::silu(xs);
      b = ops::silu(b_raw);
      c = ops::silu(c_raw);
    }
    delta = ops::softplus(ops::add(ops::matmul(s.w_delta_up, ops::matmul(s.w_delta_down, u)), s.b_delta));
  }
  const Tensor<T> y = ops::selective_scan(xc, delta, s.a_log, b, c, seq_len, blk.kind);
  if (cap) {
    cap->decay = blk.kind;
    cap->head_dim = blk.kind == DecayKind::per_head ? s.head_dim : 1;
    cap->x = xc.detach();
    cap->delta = delta.detach();
    cap->a_log = s.a_log.detach();
    cap->b = b.detach();
    cap->c = c.detach();
  }
  Tensor<T> gated = ops::mul(y, ops::silu(z));
  if (blk.out_norm.defined()) gated = ops::rms_norm(gated, blk.out_norm);
  return ops::add(ops::matmul(blk.w_out, gated), x);
}

// Applies `fn` to each sequence's column block and reassembles the result.
template <typename T, typename Fn>
Tensor<T> per_sequence(std::size_t n, std::size_t seq_len, Fn fn) {
  const std::size_t count = n / seq_len;
  if (count == 1) return fn(std::size_t{0}, std::size_t{0});
  std::vector<Tensor<T>> outs;
  outs.reserve(count);
  for (std::size_t s = 0; s < count; ++s) outs.push_back(fn(s, s * seq_len));
  return ops::concat_cols(outs);
}

template <typename T>
Tensor<T> columns(const Tensor<T>& m, std::size_t begin, std::size_t count) {
  return (begin == 0 && count == m.cols()) ? m : ops::slice_cols(m, begin, count);
}

template <typename T>
Tensor<T> attention_forward(const AttentionLayer<T>& layer, const Tensor<T>& x, std::size_t seq_len,
                            LayerCapture<T>* cap) {
  const Tensor<T> u = ops::rms_norm(x, layer.norm);
  const Tensor<T> q = ops::matmul(layer.w_q, u);
  const Tensor<T> k = ops::matmul(layer.w_k, u);
  const Tensor<T> v = ops::matmul(layer.w_v, u);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(q.rows()));
  const Tensor<T> o = per_sequence<T>(x.cols(), seq_len, [&](std::size_t, std::size_t begin) {
    const Tensor<T> scores =
        ops::scale(ops::matmul(ops::transpose(columns(q, begin, seq_len)), columns(k, begin, seq_len)), inv_sqrt);
    const Tensor<T> probs = ops::softmax_rows(scores, true);
    if (cap) cap->weights.push_back(probs.detach());
    return ops::matmul(columns(v, begin, seq_len), ops::transpose(probs));
  });
  return ops::add(ops::matmul(layer.w_o, o), x);
}

template <typename T>
Tensor<T> linear_attention_forward(const LinearAttentionLayer<T>& layer, const Tensor<T>& x, std::size_t seq_len,
                                   LayerCapture<T>* cap) {
  const Tensor<T> u = ops::rms_norm(x, layer.norm);
  const Tensor<T> b = ops::matmul(layer.w_b, u);
  const Tensor<T> c = ops::matmul(layer.w_c, u);
  const Tensor<T> y = per_sequence<T>(x.cols(), seq_len, [&](std::size_t, std::size_t begin) {
    const Tensor<T> scores =
        ops::causal_mask(ops::matmul(ops::transpose(columns(c, begin, seq_len)), columns(b, begin, seq_len)));
    if (cap) cap->weights.push_back(scores.detach());
    return ops::matmul(columns(u, begin, seq_len), ops::transpose(scores));
  });
  return ops::add(y, x);
}

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto D = static_cast<std::size_t>(config_.d_model);
  const auto V = static_cast<std::size_t>(config_.vocab_size);
  embedding = param<T>({V, D});
  for (int i = 0; i < config_.n_layers; ++i) {
    const Variant kind = config_.layer_kind(i);
    if (kind == Variant::mamba1 || kind == Variant::mamba2) {
      layers.emplace_back(make_mamba_block<T>(config_, kind));
    } else if (kind == Variant::hybrid) {
      AttentionLayer<T> a;
      a.norm = param<T>({D}, T(1));
      a.w_q = param<T>({D, D});
      a.w_k = param<T>({D, D});
      a.w_v = param<T>({D, D});
      a.w_o = param<T>({D, D});
      layers.emplace_back(std::move(a));
    } else {
      const auto hd = static_cast<std::size_t>(config_.lin_attn_head_dim > 0 ? config_.lin_attn_head_dim
                                                                             : config_.d_state);
      LinearAttentionLayer<T> l;
      l.norm = param<T>({D}, T(1));
      l.w_b = param<T>({hd, D});
      l.w_c = param<T>({hd, D});
      layers.emplace_back(std::move(l));
    }
  }
  final_norm = param<T>({D}, T(1));
  if (!config_.tie_embeddings) head = param<T>({D, V});
}

template <typename T>
Tensor<T> Model<T>::forward(const TokenBatch& tokens, ForwardCapture<T>* capture) const {
  if (tokens.seq_len == 0 || tokens.ids.empty() || tokens.ids.size() % tokens.seq_len != 0) {
    throw DimensionError("forward: " + std::to_string(tokens.ids.size()) +
                         " token ids do not form whole sequences of length " + std::to_string(tokens.seq_len));
  }
  Tensor<T> x = ops::embedding(embedding, tokens.ids);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerCapture<T>* cap = nullptr;
    if (capture) {
      capture->layers.emplace_back();
      cap = &capture->layers.back();
      cap->layer = static_cast<int>(i);
    }
    std::visit(
        [&](const auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, MambaBlock<T>>) {
            if (cap) cap->kind = layer.kind == DecayKind::per_channel ? "mamba1" : "mamba2";
            x = mamba_forward(layer, x, tokens.seq_len, cap);
          } else if constexpr (std::is_same_v<L, AttentionLayer<T>>) {
            if (cap) cap->kind = "attention";
            x = attention_forward(layer, x, tokens.seq_len, cap);
          } else {
            if (cap) cap->kind = "linear_attention";
            x = linear_attention_forward(layer, x, tokens.seq_len, cap);
          }
        },
        layers[i]);
  }
  const Tensor<T> h = ops::transpose(ops::rms_norm(x, final_norm));
  return config_.tie_embeddings ? ops::matmul(h, ops::transpose(embedding)) : ops::matmul(h, head);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Model<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.emplace_back("embedding", embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    std::visit(
        [&](const auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, MambaBlock<T>>) {
            out.emplace_back(p + "norm", layer.norm);
            out.emplace_back(p + "w_x", layer.w_x);
            out.emplace_back(p + "w_z", layer.w_z);
            out.emplace_back(p + "w_out", layer.w_out);
            if (layer.out_norm.defined()) out.emplace_back(p + "out_norm", layer.out_norm);
            out.emplace_back(p + "a_log", layer.ssm.a_log);
            out.emplace_back(p + "w_b", layer.ssm.w_b);
            out.emplace_back(p + "w_c", layer.ssm.w_c);
            out.emplace_back(p + "w_delta_down", layer.ssm.w_delta_down);
            out.emplace_back(p + "w_delta_up", layer.ssm.w_delta_up);
            out.emplace_back(p + "b_delta", layer.ssm.b_delta);
            if (layer.ssm.conv_kernel.defined()) {
              out.emplace_back(p + "conv_kernel", layer.ssm.conv_kernel);
              out.emplace_back(p + "conv_bias", layer.ssm.conv_bias);
            }
          } else if constexpr (std::is_same_v<L, AttentionLayer<T>>) {
            out.emplace_back(p + "norm", layer.norm);
            out.emplace_back(p + "w_q", layer.w_q);
            out.emplace_back(p + "w_k", layer.w_k);
            out.emplace_back(p + "w_v", layer.w_v);
            out.emplace_back(p + "w_o", layer.w_o);
          } else {
            out.emplace_back(p + "norm", layer.norm);
            out.emplace_back(p + "w_b", layer.w_b);
            out.emplace_back(p + "w_c", layer.w_c);
          }
        },
        layers[i]);
  }
  out.emplace_back("final_norm", final_norm);
  if (!config_.tie_embeddings) out.emplace_back("head", head);
  return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

template class Model<float>;
template class Model<double>;

}  // namespace mssm

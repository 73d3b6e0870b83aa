#include "mssm/init.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "mssm/error.hpp"

namespace mssm {

InitFlags InitFlags::preset(const std::string& name) {
  InitFlags f;
  if (name == "default") return f;
  if (name == "mimetic-mamba1" || name == "mimetic-mamba2") {
    f.a_near_one = f.delta_near_one = f.qk_correlated = true;
    f.conv_identity = name == "mimetic-mamba2";
    f.c = 8.0;
    return f;
  }
  throw ConfigError("init.preset", "unknown preset '" + name + "' (default, mimetic-mamba1, mimetic-mamba2)");
}

InitFlags InitFlags::from_mask(unsigned mask, double c) {
  InitFlags f;
  f.a_near_one = mask & 1u;
  f.delta_near_one = mask & 2u;
  f.qk_correlated = mask & 4u;
  f.conv_identity = mask & 8u;
  f.c = c;
  return f;
}

unsigned InitFlags::mask() const {
  return (a_near_one ? 1u : 0u) | (delta_near_one ? 2u : 0u) | (qk_correlated ? 4u : 0u) | (conv_identity ? 8u : 0u);
}

std::string InitFlags::describe() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += "+";
    s += name;
  };
  add(a_near_one, "a");
  add(delta_near_one, "delta");
  add(qk_correlated, "qk");
  add(conv_identity, "conv");
  return s.empty() ? "default" : s;
}

nlohmann::json InitFlags::to_json() const {
  return {{"a_near_one", a_near_one}, {"delta_near_one", delta_near_one}, {"qk_correlated", qk_correlated},
          {"conv_identity", conv_identity}, {"c", c}, {"floor_a_log", floor_a_log}};
}

InitFlags InitFlags::from_json(const nlohmann::json& j, const std::string& prefix) {
  using detail::optional_or;
  InitFlags f;
  if (j.is_string()) return preset(j.get<std::string>());
  const std::string name = optional_or<std::string>(j, prefix, "preset", "");
  if (!name.empty()) f = preset(name);
  f.a_near_one = optional_or<bool>(j, prefix, "a_near_one", f.a_near_one);
  f.delta_near_one = optional_or<bool>(j, prefix, "delta_near_one", f.delta_near_one);
  f.qk_correlated = optional_or<bool>(j, prefix, "qk_correlated", f.qk_correlated);
  f.conv_identity = optional_or<bool>(j, prefix, "conv_identity", f.conv_identity);
  f.c = optional_or<double>(j, prefix, "c", f.c);
  f.floor_a_log = optional_or<bool>(j, prefix, "floor_a_log", f.floor_a_log);
  if (!(f.c > 0.0)) throw ConfigError(detail::join_key(prefix, "c"), "must be positive");
  return f;
}

namespace {

template <typename T>
void fill_normal(Tensor<T>& t, Rng rng, double variance) {
  const double sd = std::sqrt(variance);
  for (auto& v : t.data()) v = static_cast<T>(rng.normal() * sd);
}

template <typename T>
void fill(Tensor<T>& t, T value) {
  for (auto& v : t.data()) v = value;
}

template <typename T>
void init_ssm_defaults(SsmLayerParams<T>& s, const Rng& root, const std::string& p) {
  const double n_state = static_cast<double>(s.w_b.rows());
  fill_normal(s.w_b, root.substream(p + "w_b"), 1.0 / n_state);
  fill_normal(s.w_c, root.substream(p + "w_c"), 1.0 / n_state);
  fill_normal(s.w_delta_down, root.substream(p + "w_delta_down"), 1.0 / static_cast<double>(s.w_delta_down.cols()));
  fill_normal(s.w_delta_up, root.substream(p + "w_delta_up"), 1.0 / static_cast<double>(s.w_delta_up.cols()));
  Rng rb = root.substream(p + "b_delta");
  for (auto& v : s.b_delta.data()) {
    const double dt = std::exp(rb.uniform(std::log(1e-3), std::log(1e-1)));
    v = static_cast<T>(softplus_inverse(dt));
  }
  if (s.kind == DecayKind::per_channel) {
    for (std::size_t e = 0; e < s.a_log.rows(); ++e)
      for (std::size_t n = 0; n < s.a_log.cols(); ++n) s.a_log(e, n) = static_cast<T>(std::log(double(n + 1)));
  } else {
    Rng ra = root.substream(p + "a_log");
    for (auto& v : s.a_log.data()) v = static_cast<T>(std::log(ra.uniform(1.0, 16.0)));
  }
  if (s.conv_kernel.defined()) {
    fill_normal(s.conv_kernel, root.substream(p + "conv_kernel"), 1.0 / static_cast<double>(s.conv_kernel.cols()));
    fill(s.conv_bias, T(0));
  }
}

}  // namespace

template <typename T>
void default_init(Model<T>& model, std::uint64_t seed) {
  const Rng root(seed);
  const double d = static_cast<double>(model.config().d_model);
  fill_normal(model.embedding, root.substream("embedding"), 1.0);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    std::visit(
        [&](auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          fill(layer.norm, T(1));
          if constexpr (std::is_same_v<L, MambaBlock<T>>) {
            fill_normal(layer.w_x, root.substream(p + "w_x"), 1.0 / d);
            fill_normal(layer.w_z, root.substream(p + "w_z"), 1.0 / d);
            fill_normal(layer.w_out, root.substream(p + "w_out"), 1.0 / static_cast<double>(layer.w_out.cols()));
            if (layer.out_norm.defined()) fill(layer.out_norm, T(1));
            init_ssm_defaults(layer.ssm, root, p);
          } else if constexpr (std::is_same_v<L, AttentionLayer<T>>) {
            fill_normal(layer.w_q, root.substream(p + "w_q"), 1.0 / d);
            fill_normal(layer.w_k, root.substream(p + "w_k"), 1.0 / d);
            fill_normal(layer.w_v, root.substream(p + "w_v"), 1.0 / d);
            fill_normal(layer.w_o, root.substream(p + "w_o"), 1.0 / d);
          } else {
            fill_normal(layer.w_b, root.substream(p + "w_b"), 1.0 / d);
            fill_normal(layer.w_c, root.substream(p + "w_c"), 1.0 / d);
          }
        },
        model.layers[i]);
  }
  fill(model.final_norm, T(1));
  if (model.head.defined()) fill_normal(model.head, root.substream("head"), 1.0 / d);
}

template <typename T>
void init_a_near_one(SsmLayerParams<T>& params, double c, bool floor_a_log) {
  if (!(c > 0.0)) throw ConfigError("init.c", "must be positive");
  const double floor = std::log(2.0);
  for (auto& v : params.a_log.data()) {
    const double base = floor_a_log ? std::max<double>(v, floor) : static_cast<double>(v);
    v = static_cast<T>(-c * base);
  }
}

template <typename T>
void init_delta_near_one(SsmLayerParams<T>& params) {
  for (auto& v : params.w_delta_up.data()) v = static_cast<T>(v * T(1e-4));
  const T b = static_cast<T>(softplus_inverse(1.0));
  for (auto& v : params.b_delta.data()) v = b;
}

template <typename T>
void init_linear_attention_mode(SsmLayerParams<T>& params, double c, bool floor_a_log) {
  init_a_near_one(params, c, floor_a_log);
  init_delta_near_one(params);
}

template <typename T>
void init_qk_correlated(SsmLayerParams<T>& params, Rng rng) {
  const double sd = std::sqrt(1.0 / static_cast<double>(params.w_b.rows()));
  auto wc = params.w_c.data();
  auto wb = params.w_b.data();
  for (std::size_t i = 0; i < wc.size(); ++i) wc[i] = static_cast<T>((rng.normal() * sd + wb[i]) / 2.0);
}

template <typename T>
void init_conv_identity(SsmLayerParams<T>& params) {
  if (!params.conv_kernel.defined()) throw ConfigError("init.conv_identity", "model has no convolution");
  const std::size_t k = params.conv_kernel.cols();
  for (std::size_t ch = 0; ch < params.conv_kernel.rows(); ++ch)
    for (std::size_t j = 0; j < k; ++j) params.conv_kernel(ch, j) = j + 1 == k ? T(1) : T(0);
  fill(params.conv_bias, T(0));
}

template <typename T>
void apply_init(const InitFlags& flags, Model<T>& model, std::uint64_t seed) {
  if (flags.conv_identity && model.config().conv_width == 0) {
    throw ConfigError("init.conv_identity", "requested for a model with conv_width = 0");
  }
  default_init(model, seed);
  const Rng root(seed);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto* blk = std::get_if<MambaBlock<T>>(&model.layers[i]);
    if (!blk) continue;
    const std::string p = "layers." + std::to_string(i) + ".";
    auto& s = blk->ssm;
    if (flags.a_near_one) init_a_near_one(s, flags.c, flags.floor_a_log);
    if (flags.delta_near_one) init_delta_near_one(s);
    if (flags.qk_correlated) init_qk_correlated(s, root.substream(p + "w_c_prime"));
    if (flags.conv_identity) init_conv_identity(s);
  }
}

#define MSSM_INSTANTIATE_INIT(T)                                                   \
  template void default_init<T>(Model<T>&, std::uint64_t);                         \
  template void init_a_near_one<T>(SsmLayerParams<T>&, double, bool);              \
  template void init_delta_near_one<T>(SsmLayerParams<T>&);                        \
  template void init_linear_attention_mode<T>(SsmLayerParams<T>&, double, bool);   \
  template void init_qk_correlated<T>(SsmLayerParams<T>&, Rng);                    \
  template void init_conv_identity<T>(SsmLayerParams<T>&);                         \
  template void apply_init<T>(const InitFlags&, Model<T>&, std::uint64_t);

MSSM_INSTANTIATE_INIT(float)
MSSM_INSTANTIATE_INIT(double)

}  // namespace mssm

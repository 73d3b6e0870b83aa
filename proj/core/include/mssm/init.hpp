#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mssm/model.hpp"
#include "mssm/rng.hpp"

namespace mssm {

/// The four mimetic components, each switchable on its own.
struct InitFlags {
  bool a_near_one = false;      // A_log <- -c * A_log0, so A-bar ~ 1
  bool delta_near_one = false;  // W_delta_up ~ 0, softplus(b_delta) = 1
  bool qk_correlated = false;   // W_C <- (W_C' + W_B) / 2
  bool conv_identity = false;   // conv kernel passes the current token through
  double c = 8.0;               // only read when a_near_one is set
  /// Clamp the default decay magnitudes at log 2 before c-scaling. Off by
  /// default; Mamba-1's first state entry otherwise keeps A = -1.
  bool floor_a_log = false;

  bool operator==(const InitFlags&) const = default;

  static InitFlags preset(const std::string& name);
  /// All 16 on/off combinations; bit 0 = a, 1 = delta, 2 = qk, 3 = conv.
  static InitFlags from_mask(unsigned mask, double c = 8.0);
  unsigned mask() const;
  std::string describe() const;

  nlohmann::json to_json() const;
  /// Accepts {"preset": name} or explicit flags; field errors name `prefix`.
  static InitFlags from_json(const nlohmann::json& j, const std::string& prefix = "init");
};

/// Baseline initialization. Every parameter draws from its own substream
/// `Rng(seed).substream(name)` so draws never depend on other parameters:
///   embedding N(0, 1); projections N(0, 1/fan_in); W_B, W_C N(0, 1/N);
///   conv kernel N(0, 1/K), conv bias 0; norms 1;
///   A_log = log n (Mamba-1, n = 1..N) or log U(1, 16) (Mamba-2);
///   b_delta = softplus^-1(LogUniform(1e-3, 1e-1)).
template <typename T>
void default_init(Model<T>& model, std::uint64_t seed);

/// A_log <- -c * A_log0, where A_log0 holds the default values (optionally
/// floored at log 2).
template <typename T>
void init_a_near_one(SsmLayerParams<T>& params, double c, bool floor_a_log = false);

/// W_delta_up *= 1e-4 and b_delta <- softplus^-1(1) = log(e - 1).
template <typename T>
void init_delta_near_one(SsmLayerParams<T>& params);

/// Both of the above: the layer starts close to causal linear attention.
template <typename T>
void init_linear_attention_mode(SsmLayerParams<T>& params, double c, bool floor_a_log = false);

/// W_C <- (W_C' + W_B) / 2 with W_C' drawn like W_B from `rng`.
template <typename T>
void init_qk_correlated(SsmLayerParams<T>& params, Rng rng);

template <typename T>
void init_conv_identity(SsmLayerParams<T>& params);

/// default_init followed by every enabled component on all SSM layers.
/// Throws ConfigError if conv_identity is requested for a model without a
/// convolution.
template <typename T>
void apply_init(const InitFlags& flags, Model<T>& model, std::uint64_t seed);

inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

}  // namespace mssm

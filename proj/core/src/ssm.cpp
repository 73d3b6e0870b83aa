#include "mssm/ssm.hpp"

#include <cmath>

#include "mssm/error.hpp"
#include "mssm/ops.hpp"

namespace mssm {

std::size_t default_delta_rank(std::size_t d) { return d <= 16 ? 1 : (d + 15) / 16; }

template <typename T>
T DiscretizedState<T>::a_bar_at(std::size_t d, std::size_t n, std::size_t t) const {
  if (kind == DecayKind::per_channel) return a_bar[(d * state + n) * length + t];
  return a_bar[group_of(d) * length + t];
}

template <typename T>
DiscretizedState<T> discretize(DecayKind kind, std::size_t head_dim, const Tensor<T>& delta,
                               const Tensor<T>& a_log, const Tensor<T>& b, const Tensor<T>& c) {
  const std::size_t groups = delta.rows(), length = delta.cols(), state = b.rows();
  if (b.cols() != length || c.rows() != state || c.cols() != length) {
    throw DimensionError("discretize: delta " + shape_str(delta.shape()) + ", B " + shape_str(b.shape()) +
                         ", C " + shape_str(c.shape()));
  }
  DiscretizedState<T> s;
  s.kind = kind;
  s.state = state;
  s.length = length;
  s.delta = delta.detach();
  s.b = b.detach();
  s.c = c.detach();
  if (kind == DecayKind::per_channel) {
    if (a_log.rank() != 2 || a_log.rows() != groups || a_log.cols() != state) {
      throw DimensionError("discretize: per-channel A_log " + shape_str(a_log.shape()) + " does not match delta " +
                           shape_str(delta.shape()) + " and state size " + std::to_string(state));
    }
    s.channels = groups;
    s.head_dim = 1;
    s.a_bar = Tensor<T>({groups, state, length});
    for (std::size_t d = 0; d < groups; ++d)
      for (std::size_t n = 0; n < state; ++n) {
        const T a = -std::exp(a_log(d, n));
        for (std::size_t t = 0; t < length; ++t) s.a_bar[(d * state + n) * length + t] = std::exp(a * delta(d, t));
      }
  } else {
    if (a_log.numel() != groups || head_dim == 0) {
      throw DimensionError("discretize: per-head A_log " + shape_str(a_log.shape()) + " does not match delta " +
                           shape_str(delta.shape()));
    }
    s.channels = groups * head_dim;
    s.head_dim = head_dim;
    s.a_bar = Tensor<T>({groups, length});
    for (std::size_t h = 0; h < groups; ++h) {
      const T a = -std::exp(a_log[h]);
      for (std::size_t t = 0; t < length; ++t) s.a_bar(h, t) = std::exp(a * delta(h, t));
    }
  }
  return s;
}

template <typename T>
DiscretizedState<T> project_params(const SsmLayerParams<T>& params, const Tensor<T>& x) {
  NoGradGuard no_grad;
  if (x.rank() != 2 || x.rows() != params.w_b.cols()) {
    throw DimensionError("project_params: input " + shape_str(x.shape()) + " does not match W_B " +
                         shape_str(params.w_b.shape()));
  }
  const Tensor<T> pre = ops::add(ops::matmul(params.w_delta_up, ops::matmul(params.w_delta_down, x)), params.b_delta);
  const Tensor<T> delta = ops::softplus(pre);
  return discretize(params.kind, params.head_dim, delta, params.a_log, ops::matmul(params.w_b, x),
                    ops::matmul(params.w_c, x));
}

template <typename T>
Tensor<T> selective_scan(const DiscretizedState<T>& s, const Tensor<T>& x) {
  if (x.rank() != 2 || x.rows() != s.channels || x.cols() != s.length) {
    throw DimensionError("selective_scan: input " + shape_str(x.shape()) + " vs state with " +
                         std::to_string(s.channels) + " channels and length " + std::to_string(s.length));
  }
  Tensor<T> y({s.channels, s.length});
  std::vector<T> h(s.state);
  for (std::size_t d = 0; d < s.channels; ++d) {
    std::fill(h.begin(), h.end(), T(0));
    for (std::size_t t = 0; t < s.length; ++t) {
      T acc = T(0);
      for (std::size_t n = 0; n < s.state; ++n) {
        h[n] = s.a_bar_at(d, n, t) * h[n] + s.b_bar_at(d, n, t) * x(d, t);
        acc += s.c(n, t) * h[n];
      }
      y(d, t) = acc;
    }
  }
  return y;
}

template <typename T>
Tensor<T> materialize_attention_matrix(const DiscretizedState<T>& s, std::size_t channel, std::size_t cap) {
  if (s.length > cap) throw CapExceeded(s.length, cap);
  if (channel >= s.channels) {
    throw DimensionError("materialize_attention_matrix: channel " + std::to_string(channel) + " of " +
                         std::to_string(s.channels));
  }
  const std::size_t len = s.length;
  Tensor<T> m({len, len});
  std::vector<T> prod(s.state);
  for (std::size_t i = 0; i < len; ++i) {
    std::fill(prod.begin(), prod.end(), T(1));
    for (std::size_t j = i + 1; j-- > 0;) {
      T acc = T(0);
      for (std::size_t n = 0; n < s.state; ++n) acc += s.c(n, i) * prod[n] * s.b_bar_at(channel, n, j);
      m(i, j) = acc;
      for (std::size_t n = 0; n < s.state; ++n) prod[n] *= s.a_bar_at(channel, n, j);
    }
  }
  return m;
}

template <typename T>
Tensor<T> averaged_attention_map(std::span<const Tensor<T>> maps) {
  if (maps.empty()) throw DimensionError("averaged_attention_map: no maps");
  Tensor<T> avg(maps[0].shape());
  for (const auto& m : maps) {
    if (m.shape() != avg.shape()) {
      throw DimensionError("averaged_attention_map: shapes " + shape_str(avg.shape()) + " and " +
                           shape_str(m.shape()));
    }
    for (std::size_t i = 0; i < avg.numel(); ++i) avg[i] += m[i];
  }
  const T inv = T(1) / static_cast<T>(maps.size());
  for (std::size_t i = 0; i < avg.numel(); ++i) avg[i] *= inv;
  return avg;
}

template <typename T>
Tensor<T> averaged_attention_map(const DiscretizedState<T>& s, std::size_t cap) {
  if (s.length > cap) throw CapExceeded(s.length, cap);
  std::vector<Tensor<T>> maps;
  for (std::size_t d = 0; d < s.channels; d += s.head_dim) maps.push_back(materialize_attention_matrix(s, d, cap));
  return averaged_attention_map<T>(std::span<const Tensor<T>>(maps));
}

template <typename T>
Tensor<T> averaged_attention_mask(const DiscretizedState<T>& s, std::size_t cap) {
  if (s.length > cap) throw CapExceeded(s.length, cap);
  const std::size_t len = s.length;
  // Per-head decays are shared by every state entry, so one product per head suffices.
  const std::size_t units = s.kind == DecayKind::per_channel ? s.channels * s.state : s.groups();
  Tensor<T> mask({len, len});
  std::vector<T> prod(units);
  for (std::size_t i = 0; i < len; ++i) {
    std::fill(prod.begin(), prod.end(), T(1));
    for (std::size_t j = i + 1; j-- > 0;) {
      T acc = T(0);
      for (T p : prod) acc += p;
      mask(i, j) = acc / static_cast<T>(units);
      if (s.kind == DecayKind::per_channel) {
        for (std::size_t u = 0; u < units; ++u) prod[u] *= s.a_bar[u * len + j];
      } else {
        for (std::size_t h = 0; h < units; ++h) prod[h] *= s.a_bar(h, j);
      }
    }
  }
  return mask;
}

template <typename T>
Tensor<T> linear_attention_scores(const Tensor<T>& x, const Tensor<T>& w_b, const Tensor<T>& w_c) {
  NoGradGuard no_grad;
  return ops::causal_mask(ops::matmul(ops::transpose(ops::matmul(w_c, x)), ops::matmul(w_b, x)));
}

template <typename T>
Tensor<T> linear_attention_reference(const Tensor<T>& x, const Tensor<T>& w_b, const Tensor<T>& w_c) {
  NoGradGuard no_grad;
  return ops::matmul(x, ops::transpose(linear_attention_scores(x, w_b, w_c)));
}

#define MSSM_INSTANTIATE_SSM(T)                                                                            \
  template struct DiscretizedState<T>;                                                                     \
  template DiscretizedState<T> discretize<T>(DecayKind, std::size_t, const Tensor<T>&, const Tensor<T>&,  \
                                             const Tensor<T>&, const Tensor<T>&);                          \
  template DiscretizedState<T> project_params<T>(const SsmLayerParams<T>&, const Tensor<T>&);             \
  template Tensor<T> selective_scan<T>(const DiscretizedState<T>&, const Tensor<T>&);                      \
  template Tensor<T> materialize_attention_matrix<T>(const DiscretizedState<T>&, std::size_t, std::size_t); \
  template Tensor<T> averaged_attention_map<T>(std::span<const Tensor<T>>);                                \
  template Tensor<T> averaged_attention_map<T>(const DiscretizedState<T>&, std::size_t);                   \
  template Tensor<T> averaged_attention_mask<T>(const DiscretizedState<T>&, std::size_t);                  \
  template Tensor<T> linear_attention_scores<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> linear_attention_reference<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

MSSM_INSTANTIATE_SSM(float)
MSSM_INSTANTIATE_SSM(double)

}  // namespace mssm

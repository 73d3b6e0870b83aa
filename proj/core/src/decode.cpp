#include "mssm/decode.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "mssm/error.hpp"
#include "mssm/ops.hpp"
#include "vmath.hpp"

namespace mssm {

namespace {

// Causal conv for one new column per sequence, updating the history buffer.
template <typename T>
Tensor<T> conv_step(const Tensor<T>& in, const Tensor<T>& kernel, const Tensor<T>& bias, std::vector<T>& hist,
                    std::size_t batch) {
  const std::size_t channels = in.rows(), width = kernel.cols(), past = width - 1;
  Tensor<T> out({channels, batch});
  for (std::size_t c = 0; c < channels; ++c) {
    const T* kr = kernel.data().data() + c * width;
    for (std::size_t b = 0; b < batch; ++b) {
      T* hb = hist.data() + (b * channels + c) * past;
      const T xv = in(c, b);
      T acc = bias[c] + kr[past] * xv;
      for (std::size_t k = 0; k < past; ++k) acc += kr[k] * hb[k];
      out(c, b) = acc;
      for (std::size_t k = 0; k + 1 < past; ++k) hb[k] = hb[k + 1];
      if (past > 0) hb[past - 1] = xv;
    }
  }
  return out;
}

}  // namespace

template <typename T>
Decoder<T>::Decoder(const Model<T>& model, std::size_t batch) : model_(model), batch_(batch) {
  if (batch == 0) throw DimensionError("Decoder: batch must be positive");
  const auto& cfg = model.config();
  for (const auto& layer : model.layers) {
    LayerState st;
    if (const auto* m = std::get_if<MambaBlock<T>>(&layer)) {
      const std::size_t E = m->w_x.rows(), N = m->ssm.w_b.rows();
      if (m->ssm.conv_kernel.defined()) {
        st.conv.assign(batch * m->ssm.conv_kernel.rows() * (m->ssm.conv_kernel.cols() - 1), T(0));
      }
      st.h.assign(batch * E * N, T(0));
    } else if (const auto* l = std::get_if<LinearAttentionLayer<T>>(&layer)) {
      st.h.assign(batch * static_cast<std::size_t>(cfg.d_model) * l->w_b.rows(), T(0));
    } else {
      st.keys.resize(batch);
      st.values.resize(batch);
    }
    states_.push_back(std::move(st));
  }
}

template <typename T>
Tensor<T> Decoder<T>::step(std::span<const int> tokens) {
  if (tokens.size() != batch_) {
    throw DimensionError("Decoder::step: expected " + std::to_string(batch_) + " tokens, got " +
                         std::to_string(tokens.size()));
  }
  NoGradGuard no_grad;
  const std::size_t B = batch_;
  Tensor<T> x = ops::embedding(model_.embedding, tokens);  // [D x B]
  for (std::size_t li = 0; li < model_.layers.size(); ++li) {
    LayerState& st = states_[li];
    const auto& layer = model_.layers[li];
    if (const auto* m = std::get_if<MambaBlock<T>>(&layer)) {
      const auto& s = m->ssm;
      const Tensor<T> u = ops::rms_norm(x, m->norm);
      const Tensor<T> xs = ops::matmul(m->w_x, u);
      const Tensor<T> z = ops::matmul(m->w_z, u);
      const std::size_t E = xs.rows(), N = s.w_b.rows();
      const bool has_conv = s.conv_kernel.defined();
      Tensor<T> xc, b, c, delta;
      if (m->kind == DecayKind::per_channel) {
        xc = ops::silu(has_conv ? conv_step(xs, s.conv_kernel, s.conv_bias, st.conv, B) : xs);
        delta = ops::softplus(ops::add(ops::matmul(s.w_delta_up, ops::matmul(s.w_delta_down, xc)), s.b_delta));
        b = ops::matmul(s.w_b, xc);
        c = ops::matmul(s.w_c, xc);
      } else {
        Tensor<T> xbc = ops::concat_rows<T>({xs, ops::matmul(s.w_b, u), ops::matmul(s.w_c, u)});
        xbc = ops::silu(has_conv ? conv_step(xbc, s.conv_kernel, s.conv_bias, st.conv, B) : xbc);
        xc = ops::slice_rows(xbc, 0, E);
        b = ops::slice_rows(xbc, E, N);
        c = ops::slice_rows(xbc, E + N, N);
        delta = ops::softplus(ops::add(ops::matmul(s.w_delta_up, ops::matmul(s.w_delta_down, u)), s.b_delta));
      }
      Tensor<T> y({E, B});
      const bool per_head = m->kind == DecayKind::per_head;
      const std::size_t hd = per_head ? s.head_dim : 1;
      std::vector<T> a(s.a_log.numel());
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(s.a_log[i]);
      const Tensor<T> bt = ops::transpose(b), ct = ops::transpose(c);
      for (std::size_t bi = 0; bi < B; ++bi) {
        const T* bp = bt.data().data() + bi * N;
        const T* cp = ct.data().data() + bi * N;
        for (std::size_t e = 0; e < E; ++e) {
          const std::size_t g = e / hd;
          const T dt = delta(g, bi);
          const T u_in = dt * xc(e, bi);
          T* h = st.h.data() + (bi * E + e) * N;
          T acc = T(0);
          if (per_head) {
            const T decay = std::exp(a[g] * dt);
#pragma omp simd reduction(+ : acc)
            for (std::size_t k = 0; k < N; ++k) {
              h[k] = decay * h[k] + u_in * bp[k];
              acc += cp[k] * h[k];
            }
          } else {
            const T* ae = a.data() + e * N;
#pragma omp simd reduction(+ : acc)
            for (std::size_t k = 0; k < N; ++k) {
              h[k] = detail::vexp(ae[k] * dt) * h[k] + u_in * bp[k];
              acc += cp[k] * h[k];
            }
          }
          y(e, bi) = acc;
        }
      }
      Tensor<T> gated = ops::mul(y, ops::silu(z));
      if (m->out_norm.defined()) gated = ops::rms_norm(gated, m->out_norm);
      x = ops::add(ops::matmul(m->w_out, gated), x);
    } else if (const auto* a = std::get_if<AttentionLayer<T>>(&layer)) {
      const Tensor<T> u = ops::rms_norm(x, a->norm);
      const Tensor<T> q = ops::matmul(a->w_q, u);
      const Tensor<T> k = ops::matmul(a->w_k, u);
      const Tensor<T> v = ops::matmul(a->w_v, u);
      const std::size_t D = q.rows();
      const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(D));
      Tensor<T> o({D, B});
      for (std::size_t bi = 0; bi < B; ++bi) {
        auto& keys = st.keys[bi];
        auto& values = st.values[bi];
        for (std::size_t i = 0; i < D; ++i) keys.push_back(k(i, bi));
        for (std::size_t i = 0; i < D; ++i) values.push_back(v(i, bi));
        const std::size_t len = keys.size() / D;
        std::vector<T> w(len);
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          T dot = T(0);
          for (std::size_t i = 0; i < D; ++i) dot += q(i, bi) * keys[j * D + i];
          w[j] = dot * inv_sqrt;
          mx = std::max(mx, w[j]);
        }
        T total = T(0);
        for (auto& wj : w) {
          wj = std::exp(wj - mx);
          total += wj;
        }
        for (std::size_t i = 0; i < D; ++i) {
          T acc = T(0);
          for (std::size_t j = 0; j < len; ++j) acc += w[j] * values[j * D + i];
          o(i, bi) = acc / total;
        }
      }
      x = ops::add(ops::matmul(a->w_o, o), x);
    } else {
      const auto& l = std::get<LinearAttentionLayer<T>>(layer);
      const Tensor<T> u = ops::rms_norm(x, l.norm);
      const Tensor<T> b = ops::matmul(l.w_b, u);
      const Tensor<T> c = ops::matmul(l.w_c, u);
      const std::size_t D = u.rows(), hd = b.rows();
      Tensor<T> y({D, B});
      for (std::size_t bi = 0; bi < B; ++bi) {
        T* S = st.h.data() + bi * D * hd;  // sum_j u_j b_j^T
        for (std::size_t i = 0; i < D; ++i) {
          T acc = T(0);
          for (std::size_t r = 0; r < hd; ++r) {
            S[i * hd + r] += u(i, bi) * b(r, bi);
            acc += S[i * hd + r] * c(r, bi);
          }
          y(i, bi) = acc;
        }
      }
      x = ops::add(y, x);
    }
  }
  ++position_;
  const Tensor<T> h = ops::transpose(ops::rms_norm(x, model_.final_norm));
  return model_.config().tie_embeddings ? ops::matmul(h, ops::transpose(model_.embedding))
                                        : ops::matmul(h, model_.head);
}

template <typename T>
std::size_t argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

template <typename T>
std::vector<int> greedy_decode(const Model<T>& model, std::span<const int> prompt, std::size_t max_new,
                               int stop_token) {
  if (prompt.empty()) throw Error("greedy_decode: prompt must be non-empty");
  std::vector<int> out;
  if (max_new == 0) return out;
  Decoder<T> dec(model, 1);
  Tensor<T> logits;
  for (int tok : prompt) logits = dec.step(std::span<const int>(&tok, 1));
  while (out.size() < max_new) {
    const int next = static_cast<int>(argmax<T>(logits.data()));
    if (next == stop_token) break;
    out.push_back(next);
    if (out.size() == max_new) break;
    logits = dec.step(std::span<const int>(&out.back(), 1));
  }
  return out;
}

template class Decoder<float>;
template class Decoder<double>;
template std::size_t argmax<float>(std::span<const float>);
template std::size_t argmax<double>(std::span<const double>);
template std::vector<int> greedy_decode<float>(const Model<float>&, std::span<const int>, std::size_t, int);
template std::vector<int> greedy_decode<double>(const Model<double>&, std::span<const int>, std::size_t, int);

}  // namespace mssm

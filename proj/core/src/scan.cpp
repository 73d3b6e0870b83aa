#include <algorithm>
#include <cmath>
#include <vector>

#include "mssm/error.hpp"
#include "mssm/gemm.hpp"
#include "mssm/ssm.hpp"
#include "vmath.hpp"

namespace mssm::ops {

namespace {

template <typename T>
std::vector<T> transposed(const T* m, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = m[r * cols + c];
  return out;
}

// Channels are processed in blocks so the state of a block stays in cache and
// the inner loops run over contiguous channels.
constexpr std::size_t kBlock = 64;

struct ScanDims {
  std::size_t channels, groups, state, cols, seq_len, head_dim;
  DecayKind kind;
};

// Time-major copies of the scan inputs. The state of a block is stored
// [N x width]: h[k * width + j] belongs to channel e0 + j.
template <typename T>
struct ScanInputs {
  std::vector<T> xt;   // [n x E]
  std::vector<T> dtt;  // [n x G]
  std::vector<T> a;    // -exp(A_log); per channel stored [N x E]
  std::vector<T> bt, ct;  // [n x N]
};

template <typename T>
struct BlockStep {
  std::vector<T> dt, u, decay;  // [width]
  explicit BlockStep(std::size_t w) : dt(w), u(w), decay(w) {}
};

// Per-column quantities of channels [e0, e0 + w): dt, u = dt * x and, for
// per-head decay, exp(a * dt).
template <typename T>
void load_step(const ScanDims& dm, const ScanInputs<T>& in, std::size_t col, std::size_t e0, std::size_t w,
               BlockStep<T>& st) {
  const T* xr = in.xt.data() + col * dm.channels + e0;
  const T* dr = in.dtt.data() + col * dm.groups;
  for (std::size_t j = 0; j < w; ++j) {
    const std::size_t g = (e0 + j) / dm.head_dim;
    st.dt[j] = dr[g];
    st.u[j] = dr[g] * xr[j];
    if (dm.kind == DecayKind::per_head) st.decay[j] = std::exp(in.a[g] * dr[g]);
  }
}

// Runs the recurrence for channels [e0, e0 + w) over the sequence at s0.
// y is time-major [n x E]. If hs is non-null it receives the state after
// every step, hs[(col - s0) * N * w + ...].
template <typename T>
void scan_block(const ScanDims& dm, const ScanInputs<T>& in, std::size_t e0, std::size_t w, std::size_t s0, T* y,
                T* hs, std::vector<T>& h, BlockStep<T>& st) {
  const std::size_t N = dm.state, E = dm.channels;
  std::fill(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(N * w), T(0));
  for (std::size_t col = s0; col < s0 + dm.seq_len; ++col) {
    load_step(dm, in, col, e0, w, st);
    T* yr = y + col * E + e0;
    std::fill(yr, yr + w, T(0));
    const T* bp = in.bt.data() + col * N;
    const T* cp = in.ct.data() + col * N;
    const T* dec = st.decay.data();
    const T* dt = st.dt.data();
    const T* u = st.u.data();
    for (std::size_t k = 0; k < N; ++k) {
      T* hk = h.data() + k * w;
      const T bk = bp[k], ck = cp[k];
      if (dm.kind == DecayKind::per_head) {
#pragma omp simd
        for (std::size_t j = 0; j < w; ++j) {
          hk[j] = dec[j] * hk[j] + u[j] * bk;
          yr[j] += ck * hk[j];
        }
      } else {
        const T* ak = in.a.data() + k * E + e0;
#pragma omp simd
        for (std::size_t j = 0; j < w; ++j) {
          hk[j] = detail::vexp(ak[j] * dt[j]) * hk[j] + u[j] * bk;
          yr[j] += ck * hk[j];
        }
      }
    }
    if (hs) std::copy(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(N * w), hs + (col - s0) * N * w);
  }
}

// Per-head decay in matrix form. For sequence s and head h,
//   Y_h = X_h W^T,  W[i][j] = (C_i . B_j) * prod_{j<k<=i} exp(a_h dt_k) * dt_j  (j <= i),
// so both passes reduce to small GEMMs per (sequence, head).
template <typename T>
Tensor<T> per_head_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a_log, const Tensor<T>& b,
                        const Tensor<T>& c, const ScanDims& dm) {
  const std::size_t L = dm.seq_len, S = dm.cols / L, H = dm.groups, P = dm.head_dim, N = dm.state, n = dm.cols;
  std::vector<T> a(H);
  for (std::size_t h = 0; h < H; ++h) a[h] = -std::exp(a_log[h]);
  const T* xp = x.data().data();
  const T* dp = delta.data().data();
  const T* bp = b.data().data();
  const T* cp = c.data().data();

  // cb[s]: C_s^T B_s, lower triangle. decay[s][h]: prod_{j<k<=i} exp(a_h dt_k).
  std::vector<T> cb(S * L * L), decay(S * H * L * L, T(0)), w(S * H * L * L, T(0));
  std::vector<T> y(dm.channels * n, T(0));
  std::vector<T> step(L);
  for (std::size_t s = 0; s < S; ++s) {
    const std::size_t s0 = s * L;
    T* cbs = cb.data() + s * L * L;
    gemm<T>(true, false, L, L, N, T(1), cp + s0, n, bp + s0, n, T(0), cbs, L);
    for (std::size_t h = 0; h < H; ++h) {
      const T* dt = dp + h * n + s0;
      for (std::size_t k = 0; k < L; ++k) step[k] = std::exp(a[h] * dt[k]);
      T* dec = decay.data() + (s * H + h) * L * L;
      T* ws = w.data() + (s * H + h) * L * L;
      for (std::size_t i = 0; i < L; ++i) {
        T prod = T(1);
        for (std::size_t j = i + 1; j-- > 0;) {
          dec[i * L + j] = prod;
          ws[i * L + j] = cbs[i * L + j] * prod * dt[j];
          prod *= step[j];
        }
      }
      gemm<T>(false, true, P, L, L, T(1), xp + h * P * n + s0, n, ws, L, T(0), y.data() + h * P * n + s0, n);
    }
  }

  return make_result<T>(
      {dm.channels, n}, std::move(y), "selective_scan", {x, delta, a_log, b, c},
      [dm, a = std::move(a), cb = std::move(cb), decay = std::move(decay), w = std::move(w)](detail::Node<T>& node) {
        auto& px = *node.parents[0];
        auto& pd = *node.parents[1];
        auto& pa = *node.parents[2];
        auto& pb = *node.parents[3];
        auto& pc = *node.parents[4];
        const std::size_t L = dm.seq_len, S = dm.cols / L, H = dm.groups, P = dm.head_dim, N = dm.state,
                          n = dm.cols;
        const T* gy = node.grad.data();
        const T* xp = px.data.data();
        const T* dp = pd.data.data();
        std::vector<T> gx(dm.channels * n, T(0)), gdelta(H * n, T(0)), ga(H, T(0));
        std::vector<T> gw(L * L), gcb(L * L), pref(L);
        std::vector<T> gb(N * n, T(0)), gc(N * n, T(0));
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t s0 = s * L;
          const T* cbs = cb.data() + s * L * L;
          std::fill(gcb.begin(), gcb.end(), T(0));
          for (std::size_t h = 0; h < H; ++h) {
            const T* dt = dp + h * n + s0;
            const T* dec = decay.data() + (s * H + h) * L * L;
            const T* ws = w.data() + (s * H + h) * L * L;
            const T* xh = xp + h * P * n + s0;
            const T* gyh = gy + h * P * n + s0;
            gemm<T>(false, false, P, L, L, T(1), gyh, n, ws, L, T(1), gx.data() + h * P * n + s0, n);
            gemm<T>(true, false, L, L, P, T(1), gyh, n, xh, n, T(0), gw.data(), L);
            T* gdt = gdelta.data() + h * n + s0;
            // q = dLoss/dlog(decay product), reusing gw in place.
            for (std::size_t i = 0; i < L; ++i) {
              for (std::size_t j = 0; j <= i; ++j) {
                const T g = gw[i * L + j];
                gcb[i * L + j] += g * dec[i * L + j] * dt[j];
                gdt[j] += g * cbs[i * L + j] * dec[i * L + j];
                gw[i * L + j] = g * ws[i * L + j];
              }
            }
            // d log decay[i][j] / d dt_k = a_h for j < k <= i.
            std::fill(pref.begin(), pref.end(), T(0));
            for (std::size_t k = 1; k < L; ++k) {
              T z = T(0);
              for (std::size_t i = k; i < L; ++i) {
                pref[i] += gw[i * L + k - 1];
                z += pref[i];
              }
              gdt[k] += a[h] * z;
              ga[h] += dt[k] * z;
            }
          }
          const T* bs = pb.data.data() + s0;
          const T* cs = pc.data.data() + s0;
          gemm<T>(false, true, N, L, L, T(1), bs, n, gcb.data(), L, T(1), gc.data() + s0, n);
          gemm<T>(false, false, N, L, L, T(1), cs, n, gcb.data(), L, T(1), gb.data() + s0, n);
        }
        auto accumulate = [](detail::Node<T>& p, const std::vector<T>& g) {
          if (!p.requires_grad) return;
          T* dst = p.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        };
        accumulate(px, gx);
        accumulate(pd, gdelta);
        // dA/dA_log = A
        for (std::size_t h = 0; h < H; ++h) ga[h] *= a[h];
        accumulate(pa, ga);
        accumulate(pb, gb);
        accumulate(pc, gc);
      });
}

}  // namespace

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a_log,
                         const Tensor<T>& b, const Tensor<T>& c, std::size_t seq_len, DecayKind kind) {
  if (x.rank() != 2 || delta.rank() != 2 || b.rank() != 2 || c.rank() != 2) {
    throw DimensionError("selective_scan: x, delta, B and C must be matrices");
  }
  ScanDims dm{};
  dm.kind = kind;
  dm.channels = x.rows();
  dm.cols = x.cols();
  dm.groups = delta.rows();
  dm.state = b.rows();
  dm.seq_len = seq_len == 0 ? dm.cols : seq_len;
  const std::string shapes = "x " + shape_str(x.shape()) + ", delta " + shape_str(delta.shape()) + ", A_log " +
                             shape_str(a_log.shape()) + ", B " + shape_str(b.shape()) + ", C " +
                             shape_str(c.shape());
  if (delta.cols() != dm.cols || b.cols() != dm.cols || c.rows() != dm.state || c.cols() != dm.cols ||
      dm.cols % dm.seq_len != 0) {
    throw DimensionError("selective_scan: incompatible shapes " + shapes);
  }
  if (kind == DecayKind::per_channel) {
    if (dm.groups != dm.channels || a_log.rank() != 2 || a_log.rows() != dm.channels || a_log.cols() != dm.state) {
      throw DimensionError("selective_scan: per-channel decay needs delta [E x n] and A_log [E x N]; got " + shapes);
    }
    dm.head_dim = 1;
  } else {
    if (a_log.numel() != dm.groups || dm.channels % dm.groups != 0) {
      throw DimensionError("selective_scan: per-head decay needs delta [H x n], A_log [H], H | E; got " + shapes);
    }
    dm.head_dim = dm.channels / dm.groups;
  }

  if (kind == DecayKind::per_head) return per_head_scan(x, delta, a_log, b, c, dm);

  ScanInputs<T> in;
  in.xt = transposed(x.data().data(), dm.channels, dm.cols);
  in.dtt = transposed(delta.data().data(), dm.groups, dm.cols);
  if (kind == DecayKind::per_channel) {
    std::vector<T> a(a_log.numel());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log[i]);
    in.a = transposed(a.data(), dm.channels, dm.state);
  } else {
    in.a.resize(a_log.numel());
    for (std::size_t i = 0; i < in.a.size(); ++i) in.a[i] = -std::exp(a_log[i]);
  }
  in.bt = transposed(b.data().data(), dm.state, dm.cols);
  in.ct = transposed(c.data().data(), dm.state, dm.cols);

  const std::size_t width = std::min(kBlock, dm.channels);
  std::vector<T> yt(dm.cols * dm.channels);
  {
    std::vector<T> h(dm.state * width);
    BlockStep<T> st(width);
    for (std::size_t e0 = 0; e0 < dm.channels; e0 += width) {
      const std::size_t w = std::min(width, dm.channels - e0);
      for (std::size_t s0 = 0; s0 < dm.cols; s0 += dm.seq_len) scan_block<T>(dm, in, e0, w, s0, yt.data(), nullptr, h, st);
    }
  }
  std::vector<T> y = transposed(yt.data(), dm.cols, dm.channels);

  return make_result<T>(
      {dm.channels, dm.cols}, std::move(y), "selective_scan", {x, delta, a_log, b, c},
      [dm, width, in = std::move(in), yt = std::move(yt)](detail::Node<T>& node) mutable {
        auto& px = *node.parents[0];
        auto& pd = *node.parents[1];
        auto& pa = *node.parents[2];
        auto& pb = *node.parents[3];
        auto& pc = *node.parents[4];
        const std::size_t N = dm.state, n = dm.cols, E = dm.channels;
        const bool per_head = dm.kind == DecayKind::per_head;
        const std::vector<T> gyt = transposed(node.grad.data(), E, n);
        std::vector<T> gx(E * n, T(0)), gdelta(dm.groups * n, T(0)), ga(in.a.size(), T(0));
        std::vector<T> gbt(n * N, T(0)), gct(n * N, T(0));
        std::vector<T> h(N * width), dh(N * width), hs(dm.seq_len * N * width), zeros(N * width, T(0));
        std::vector<T> dot_b(width), d_dt(width), d_dec(width);
        BlockStep<T> st(width);
        for (std::size_t e0 = 0; e0 < E; e0 += width) {
          const std::size_t w = std::min(width, E - e0);
          for (std::size_t s0 = 0; s0 < n; s0 += dm.seq_len) {
            scan_block(dm, in, e0, w, s0, yt.data(), hs.data(), h, st);
            std::fill(dh.begin(), dh.end(), T(0));
            for (std::size_t col = s0 + dm.seq_len; col-- > s0;) {
              load_step(dm, in, col, e0, w, st);
              const T* gy = gyt.data() + col * E + e0;
              const T* hcur = hs.data() + (col - s0) * N * w;
              const T* hprev = col > s0 ? hcur - N * w : zeros.data();
              const T* bp = in.bt.data() + col * N;
              const T* cp = in.ct.data() + col * N;
              const T* dec = st.decay.data();
              const T* dt = st.dt.data();
              const T* u = st.u.data();
              T* gbp = gbt.data() + col * N;
              T* gcp = gct.data() + col * N;
              std::fill(dot_b.begin(), dot_b.end(), T(0));
              std::fill(d_dt.begin(), d_dt.end(), T(0));
              std::fill(d_dec.begin(), d_dec.end(), T(0));
              T* db = dot_b.data();
              T* ddt = d_dt.data();
              T* ddec = d_dec.data();
              for (std::size_t k = 0; k < N; ++k) {
                const T bk = bp[k], ck = cp[k];
                T* dhk = dh.data() + k * w;
                const T* hc = hcur + k * w;
                const T* hp = hprev + k * w;
                T gc = T(0), gb = T(0);
                if (per_head) {
#pragma omp simd reduction(+ : gc, gb)
                  for (std::size_t j = 0; j < w; ++j) {
                    const T dk = dhk[j] + ck * gy[j];
                    gc += gy[j] * hc[j];
                    gb += dk * u[j];
                    db[j] += dk * bk;
                    ddec[j] += dk * hp[j];
                    dhk[j] = dk * dec[j];
                  }
                } else {
                  const T* ak = in.a.data() + k * E + e0;
                  T* gak = ga.data() + k * E + e0;
#pragma omp simd reduction(+ : gc, gb)
                  for (std::size_t j = 0; j < w; ++j) {
                    const T decay = detail::vexp(ak[j] * dt[j]);
                    const T dk = dhk[j] + ck * gy[j];
                    gc += gy[j] * hc[j];
                    gb += dk * u[j];
                    db[j] += dk * bk;
                    const T dd = dk * hp[j] * decay;
                    ddt[j] += dd * ak[j];
                    gak[j] += dd * dt[j];
                    dhk[j] = dk * decay;
                  }
                }
                gcp[k] += gc;
                gbp[k] += gb;
              }
              const T* xr = in.xt.data() + col * E + e0;
              for (std::size_t j = 0; j < w; ++j) {
                const std::size_t e = e0 + j;
                gx[e * n + col] += db[j] * dt[j];
                if (per_head) {
                  const std::size_t g = e / dm.head_dim;
                  gdelta[g * n + col] += db[j] * xr[j] + ddec[j] * dec[j] * in.a[g];
                  ga[g] += ddec[j] * dec[j] * dt[j];
                } else {
                  gdelta[e * n + col] += db[j] * xr[j] + ddt[j];
                }
              }
            }
          }
        }
        if (px.requires_grad) {
          T* g = px.grad_buffer();
          for (std::size_t i = 0; i < gx.size(); ++i) g[i] += gx[i];
        }
        if (pd.requires_grad) {
          T* g = pd.grad_buffer();
          for (std::size_t i = 0; i < gdelta.size(); ++i) g[i] += gdelta[i];
        }
        if (pa.requires_grad) {
          // dA/dA_log = A
          T* g = pa.grad_buffer();
          if (per_head) {
            for (std::size_t i = 0; i < ga.size(); ++i) g[i] += ga[i] * in.a[i];
          } else {
            for (std::size_t e = 0; e < E; ++e)
              for (std::size_t k = 0; k < N; ++k) g[e * N + k] += ga[k * E + e] * in.a[k * E + e];
          }
        }
        if (pb.requires_grad) {
          T* g = pb.grad_buffer();
          for (std::size_t k = 0; k < N; ++k)
            for (std::size_t col = 0; col < n; ++col) g[k * n + col] += gbt[col * N + k];
        }
        if (pc.requires_grad) {
          T* g = pc.grad_buffer();
          for (std::size_t k = 0; k < N; ++k)
            for (std::size_t col = 0; col < n; ++col) g[k * n + col] += gct[col * N + k];
        }
      });
}

template Tensor<float> selective_scan<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                             const Tensor<float>&, const Tensor<float>&, std::size_t, DecayKind);
template Tensor<double> selective_scan<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                               const Tensor<double>&, const Tensor<double>&, std::size_t, DecayKind);

}  // namespace mssm::ops

#include "mssm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mssm/error.hpp"
#include "mssm/gemm.hpp"
#include "vmath.hpp"

namespace mssm::ops {

namespace {

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
void require_matrix(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
  }
}

// Number of times `b` repeats inside `a`, or throws if b is not a prefix of a.
template <typename T>
std::size_t broadcast_inner(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.begin(), sb.end(), sa.begin());
  if (!ok) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                         " are not broadcastable");
  }
  return a.numel() / b.numel();
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, const char* name, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.numel());
  const T* in = x.data().data();
  T* o = out.data();
  const std::size_t count = out.size();
#pragma omp simd
  for (std::size_t i = 0; i < count; ++i) o[i] = fwd(in[i]);
  return make_result<T>(x.shape(), std::move(out), name, {x}, [deriv](NodeT<T>& node) {
    auto& px = *node.parents[0];
    if (!px.requires_grad) return;
    T* g = px.grad_buffer();
    const T* go = node.grad.data();
    const T* xv = px.data.data();
    const T* yv = node.data.data();
    const std::size_t count = node.grad.size();
#pragma omp simd
    for (std::size_t i = 0; i < count; ++i) g[i] += go[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace

template <typename T>
T sigmoid_value(T x) {
  return detail::vsigmoid(x);
}

template <typename T>
T softplus_value(T x) {
  if (x > T(30)) return x;
  return std::log1p(detail::vexp(x));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  gemm<T>(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0), out.data(), n);
  return make_result<T>({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](NodeT<T>& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    const T* g = node.grad.data();
    if (pa.requires_grad) {
      gemm<T>(false, true, m, k, n, T(1), g, n, pb.data.data(), n, T(1), pa.grad_buffer(), k);
    }
    if (pb.requires_grad) {
      gemm<T>(true, false, k, n, m, T(1), pa.data.data(), k, g, n, T(1), pb.grad_buffer(), n);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_matrix(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(r * c);
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return make_result<T>({c, r}, std::move(out), "transpose", {x}, [r, c](NodeT<T>& node) {
    auto& px = *node.parents[0];
    if (!px.requires_grad) return;
    T* g = px.grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += node.grad[j * r + i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t inner = broadcast_inner(a, b, "add");
  std::vector<T> out(a.numel());
  const auto da = a.data();
  const auto db = b.data();
  if (inner == 1) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  } else {
    for (std::size_t blk = 0, i = 0; blk < db.size(); ++blk) {
      const T bv = db[blk];
      for (std::size_t end = i + inner; i < end; ++i) out[i] = da[i] + bv;
    }
  }
  return make_result<T>(a.shape(), std::move(out), "add", {a, b}, [inner](NodeT<T>& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    const auto& g = node.grad;
    if (pa.requires_grad) {
      T* ga = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (pb.requires_grad) {
      T* gb = pb.grad_buffer();
      if (inner == 1) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      } else {
        for (std::size_t blk = 0, i = 0; i < g.size(); ++blk) {
          T acc = T(0);
          for (std::size_t end = i + inner; i < end; ++i) acc += g[i];
          gb[blk] += acc;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t inner = broadcast_inner(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto da = a.data();
  const auto db = b.data();
  if (inner == 1) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  } else {
    for (std::size_t blk = 0, i = 0; blk < db.size(); ++blk) {
      const T bv = db[blk];
      for (std::size_t end = i + inner; i < end; ++i) out[i] = da[i] * bv;
    }
  }
  return make_result<T>(a.shape(), std::move(out), "mul", {a, b}, [inner](NodeT<T>& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    const auto& g = node.grad;
    if (pa.requires_grad) {
      T* ga = pa.grad_buffer();
      if (inner == 1) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb.data[i];
      } else {
        for (std::size_t blk = 0, i = 0; i < g.size(); ++blk) {
          const T bv = pb.data[blk];
          for (std::size_t end = i + inner; i < end; ++i) ga[i] += g[i] * bv;
        }
      }
    }
    if (pb.requires_grad) {
      T* gb = pb.grad_buffer();
      if (inner == 1) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa.data[i];
      } else {
        for (std::size_t blk = 0, i = 0; i < g.size(); ++blk) {
          T acc = T(0);
          for (std::size_t end = i + inner; i < end; ++i) acc += g[i] * pa.data[i];
          gb[blk] += acc;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(
      x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary(
      x, "neg", [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x, "sigmoid", [](T v) { return detail::vsigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary(
      x, "silu", [](T v) { return v * detail::vsigmoid(v); },
      [](T v, T) {
        const T s = detail::vsigmoid(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(
      x, "softplus", [](T v) { return v > T(30) ? v : std::log1p(detail::vexp(v)); },
      [](T v, T) { return v > T(30) ? T(1) : detail::vsigmoid(v); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return make_result<T>(Shape{}, {acc}, "sum", {x}, [](NodeT<T>& node) {
    auto& px = *node.parents[0];
    if (!px.requires_grad) return;
    T* g = px.grad_buffer();
    const T go = node.grad[0];
    for (std::size_t i = 0; i < px.data.size(); ++i) g[i] += go;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  const std::size_t c = x.cols();
  if (count == 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(x.shape()));
  }
  const auto in = x.data();
  std::vector<T> out(in.begin() + static_cast<std::ptrdiff_t>(begin * c),
                     in.begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return make_result<T>({count, c}, std::move(out), "slice_rows", {x}, [begin, c](NodeT<T>& node) {
    auto& px = *node.parents[0];
    if (!px.requires_grad) return;
    T* g = px.grad_buffer() + begin * c;
    for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t r = x.rows(), c = x.cols();
  if (count == 0 || begin + count > c) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " + shape_str(x.shape()));
  }
  std::vector<T> out(r * count);
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(i * c + begin), count, out.begin() + static_cast<std::ptrdiff_t>(i * count));
  return make_result<T>({r, count}, std::move(out), "slice_cols", {x}, [r, c, begin, count](NodeT<T>& node) {
    auto& px = *node.parents[0];
    if (!px.requires_grad) return;
    T* g = px.grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * c + begin + j] += node.grad[i * count + j];
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw DimensionError("concat_rows: column counts differ: " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    rows += p.rows();
  }
  std::vector<T> out;
  out.reserve(rows * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<T>({rows, c}, std::move(out), "concat_rows", parts, [](NodeT<T>& node) {
    std::size_t offset = 0;
    for (auto& parent : node.parents) {
      const std::size_t n = parent->data.size();
      if (parent->requires_grad) {
        T* g = parent->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += node.grad[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row counts differ: " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    cols += p.cols();
  }
  std::vector<T> out(r * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    const auto in = p.data();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(i * pc), pc, out.begin() + static_cast<std::ptrdiff_t>(i * cols + offset));
    offset += pc;
  }
  return make_result<T>({r, cols}, std::move(out), "concat_cols", parts, [r, cols](NodeT<T>& node) {
    std::size_t offset = 0;
    for (auto& parent : node.parents) {
      const std::size_t pc = parent->shape[1];
      if (parent->requires_grad) {
        T* g = parent->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < pc; ++j) g[i * pc + j] += node.grad[i * cols + offset + j];
      }
      offset += pc;
    }
  });
}

template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                           std::size_t seq_len) {
  require_matrix(x, "depthwise_conv1d");
  require_matrix(kernel, "depthwise_conv1d");
  const std::size_t channels = x.rows(), n = x.cols(), width = kernel.cols();
  if (kernel.rows() != channels || bias.numel() != channels) {
    throw DimensionError("depthwise_conv1d: input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(kernel.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const std::size_t t_len = seq_len == 0 ? n : seq_len;
  if (n % t_len != 0) {
    throw DimensionError("depthwise_conv1d: " + std::to_string(n) + " columns are not a multiple of sequence length " +
                         std::to_string(t_len));
  }
  std::vector<T> out(channels * n);
  const auto xd = x.data();
  const auto kd = kernel.data();
  const auto bd = bias.data();
  // Tap k reads the input shifted right by width - 1 - k within each sequence.
  for (std::size_t c = 0; c < channels; ++c) {
    const T* kr = kd.data() + c * width;
    T* yr = out.data() + c * n;
    std::fill(yr, yr + n, bd[c]);
    for (std::size_t s0 = 0; s0 < n; s0 += t_len) {
      const T* xs = xd.data() + c * n + s0;
      T* ys = yr + s0;
      for (std::size_t k = 0; k < width; ++k) {
        const std::size_t shift = width - 1 - k;
        const T kv = kr[k];
        for (std::size_t t = shift; t < t_len; ++t) ys[t] += kv * xs[t - shift];
      }
    }
  }
  return make_result<T>(
      {channels, n}, std::move(out), "depthwise_conv1d", {x, kernel, bias},
      [channels, n, width, t_len](NodeT<T>& node) {
        auto& px = *node.parents[0];
        auto& pk = *node.parents[1];
        auto& pb = *node.parents[2];
        T* gx = px.requires_grad ? px.grad_buffer() : nullptr;
        T* gk = pk.requires_grad ? pk.grad_buffer() : nullptr;
        T* gb = pb.requires_grad ? pb.grad_buffer() : nullptr;
        for (std::size_t c = 0; c < channels; ++c) {
          const T* g = node.grad.data() + c * n;
          const T* kr = pk.data.data() + c * width;
          if (gb) {
            T acc = T(0);
            for (std::size_t col = 0; col < n; ++col) acc += g[col];
            gb[c] += acc;
          }
          for (std::size_t s0 = 0; s0 < n; s0 += t_len) {
            const T* gs = g + s0;
            const T* xs = px.data.data() + c * n + s0;
            for (std::size_t k = 0; k < width; ++k) {
              const std::size_t shift = width - 1 - k;
              if (gx) {
                T* gxs = gx + c * n + s0;
                const T kv = kr[k];
                for (std::size_t t = shift; t < t_len; ++t) gxs[t - shift] += kv * gs[t];
              }
              if (gk) {
                T acc = T(0);
                for (std::size_t t = shift; t < t_len; ++t) acc += xs[t - shift] * gs[t];
                gk[c * width + k] += acc;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, bool causal) {
  require_matrix(x, "softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (causal && r != c) throw DimensionError("softmax_rows: causal mask needs a square matrix, got " + shape_str(x.shape()));
  std::vector<T> out(r * c, T(0));
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t len = causal ? i + 1 : c;
    const T* row = in.data() + i * c;
    T* o = out.data() + i * c;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, row[j]);
    T total = T(0);
    for (std::size_t j = 0; j < len; ++j) {
      o[j] = std::exp(row[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < len; ++j) o[j] /= total;
  }
  return make_result<T>({r, c}, std::move(out), "softmax_rows", {x}, [r, c](NodeT<T>& node) {
    auto& px = *node.parents[0];
    if (!px.requires_grad) return;
    T* g = px.grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const T* p = node.data.data() + i * c;
      const T* go = node.grad.data() + i * c;
      T dot = T(0);
      for (std::size_t j = 0; j < c; ++j) dot += go[j] * p[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += p[j] * (go[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> causal_mask(const Tensor<T>& x) {
  require_matrix(x, "causal_mask");
  const std::size_t n = x.rows();
  if (x.cols() != n) throw DimensionError("causal_mask: expected a square matrix, got " + shape_str(x.shape()));
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) out[i * n + j] = T(0);
  return make_result<T>({n, n}, std::move(out), "causal_mask", {x}, [n](NodeT<T>& node) {
    auto& px = *node.parents[0];
    if (!px.requires_grad) return;
    T* g = px.grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) g[i * n + j] += node.grad[i * n + j];
  });
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& weight, T eps) {
  require_matrix(x, "rms_norm");
  const std::size_t d = x.rows(), n = x.cols();
  if (weight.numel() != d) {
    throw DimensionError("rms_norm: weight " + shape_str(weight.shape()) + " does not match input " +
                         shape_str(x.shape()));
  }
  const auto xd = x.data();
  const auto wd = weight.data();
  std::vector<T> inv_rms(n, T(0));
  for (std::size_t i = 0; i < d; ++i) {
    const T* row = xd.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) inv_rms[j] += row[j] * row[j];
  }
  for (std::size_t j = 0; j < n; ++j) inv_rms[j] = T(1) / std::sqrt(inv_rms[j] / static_cast<T>(d) + eps);
  std::vector<T> out(d * n);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] * inv_rms[j] * wd[i];
  return make_result<T>({d, n}, std::move(out), "rms_norm", {x, weight},
                        [d, n, inv_rms = std::move(inv_rms)](NodeT<T>& node) {
                          auto& px = *node.parents[0];
                          auto& pw = *node.parents[1];
                          const T* g = node.grad.data();
                          if (pw.requires_grad) {
                            T* gw = pw.grad_buffer();
                            for (std::size_t i = 0; i < d; ++i) {
                              T acc = T(0);
                              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * px.data[i * n + j] * inv_rms[j];
                              gw[i] += acc;
                            }
                          }
                          if (px.requires_grad) {
                            // dx = r * (gh - xh * mean(gh . xh)), gh = g * w, xh = x * r
                            std::vector<T> dot(n, T(0));
                            for (std::size_t i = 0; i < d; ++i)
                              for (std::size_t j = 0; j < n; ++j)
                                dot[j] += g[i * n + j] * pw.data[i] * px.data[i * n + j] * inv_rms[j];
                            T* gx = px.grad_buffer();
                            for (std::size_t i = 0; i < d; ++i)
                              for (std::size_t j = 0; j < n; ++j) {
                                const T xh = px.data[i * n + j] * inv_rms[j];
                                gx[i * n + j] +=
                                    inv_rms[j] * (g[i * n + j] * pw.data[i] - xh * dot[j] / static_cast<T>(d));
                              }
                          }
                        });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.rows(), d = table.cols(), n = ids.size();
  if (n == 0) throw DimensionError("embedding: empty id list");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw Error("token id " + std::to_string(id) + " out of range for vocabulary of " + std::to_string(vocab));
    }
  }
  std::vector<T> out(d * n);
  const auto td = table.data();
  for (std::size_t j = 0; j < n; ++j) {
    const T* row = td.data() + static_cast<std::size_t>(ids[j]) * d;
    for (std::size_t i = 0; i < d; ++i) out[i * n + j] = row[i];
  }
  std::vector<int> id_copy(ids.begin(), ids.end());
  return make_result<T>({d, n}, std::move(out), "embedding", {table}, [d, n, id_copy](NodeT<T>& node) {
    auto& pt = *node.parents[0];
    if (!pt.requires_grad) return;
    T* g = pt.grad_buffer();
    for (std::size_t j = 0; j < n; ++j) {
      T* row = g + static_cast<std::size_t>(id_copy[j]) * d;
      for (std::size_t i = 0; i < d; ++i) row[i] += node.grad[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> mask) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.rows(), vocab = logits.cols();
  if (targets.size() != n || mask.size() != n) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " with " +
                         std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                         " mask flags");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw Error("cross_entropy: target " + std::to_string(targets[i]) + " out of range for " +
                  std::to_string(vocab) + " classes");
    }
  }
  if (count == 0) throw Error("cross_entropy: no supervised positions");
  const auto ld = logits.data();
  std::vector<T> probs(n * vocab, T(0));
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const T* row = ld.data() + i * vocab;
    T mx = row[0];
    for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
    T z = T(0);
    for (std::size_t v = 0; v < vocab; ++v) {
      probs[i * vocab + v] = std::exp(row[v] - mx);
      z += probs[i * vocab + v];
    }
    for (std::size_t v = 0; v < vocab; ++v) probs[i * vocab + v] /= z;
    total += std::log(z) + mx - row[targets[i]];
  }
  const T inv_count = T(1) / static_cast<T>(count);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return make_result<T>(Shape{}, {total * inv_count}, "cross_entropy", {logits},
                        [n, vocab, inv_count, probs = std::move(probs), tgt = std::move(tgt),
                         msk = std::move(msk)](NodeT<T>& node) {
                          auto& pl = *node.parents[0];
                          if (!pl.requires_grad) return;
                          T* g = pl.grad_buffer();
                          const T scale_factor = node.grad[0] * inv_count;
                          for (std::size_t i = 0; i < n; ++i) {
                            if (!msk[i]) continue;
                            for (std::size_t v = 0; v < vocab; ++v) g[i * vocab + v] += scale_factor * probs[i * vocab + v];
                            g[i * vocab + static_cast<std::size_t>(tgt[i])] -= scale_factor;
                          }
                        });
}

#define MSSM_INSTANTIATE_OPS(T)                                                                        \
  template T sigmoid_value<T>(T);                                                                      \
  template T softplus_value<T>(T);                                                                     \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                                   \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                    \
  template Tensor<T> neg<T>(const Tensor<T>&);                                                         \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                         \
  template Tensor<T> log<T>(const Tensor<T>&);                                                         \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                     \
  template Tensor<T> silu<T>(const Tensor<T>&);                                                        \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                                    \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                         \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                        \
  template Tensor<T> slice_rows<T>(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> concat_rows<T>(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> concat_cols<T>(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> depthwise_conv1d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t); \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&, bool);                                          \
  template Tensor<T> causal_mask<T>(const Tensor<T>&);                                                 \
  template Tensor<T> rms_norm<T>(const Tensor<T>&, const Tensor<T>&, T);                               \
  template Tensor<T> embedding<T>(const Tensor<T>&, std::span<const int>);                             \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const int>, std::span<const std::uint8_t>);

MSSM_INSTANTIATE_OPS(float)
MSSM_INSTANTIATE_OPS(double)

}  // namespace mssm::ops

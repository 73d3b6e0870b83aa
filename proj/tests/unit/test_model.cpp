#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "mssm/decode.hpp"
#include "mssm/error.hpp"
#include "mssm/init.hpp"
#include "mssm/model.hpp"
#include "mssm/ops.hpp"

using namespace mssm;
using TD = Tensor<double>;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat mat(const TD& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

double silu(double v) { return v / (1 + std::exp(-v)); }
double softplus(double v) { return std::log1p(std::exp(v)); }

Mat rmsnorm(const Mat& x, const TD& w) {
  Mat y = x;
  for (std::size_t t = 0; t < x[0].size(); ++t) {
    double ms = 0;
    for (const auto& row : x) ms += row[t] * row[t];
    const double inv = 1 / std::sqrt(ms / double(x.size()) + 1e-5);
    for (std::size_t d = 0; d < x.size(); ++d) y[d][t] = x[d][t] * inv * w[d];
  }
  return y;
}

// One Mamba block written out step by step for a single sequence.
Mat block_oracle(const MambaBlock<double>& blk, const Mat& x) {
  const auto& s = blk.ssm;
  const std::size_t T = x[0].size();
  const Mat u = rmsnorm(x, blk.norm);
  const Mat xs = mm(mat(blk.w_x), u), z = mm(mat(blk.w_z), u);
  const bool mamba2 = blk.kind == DecayKind::per_head;
  Mat pre = xs;
  if (mamba2) {
    for (const auto& r : mm(mat(s.w_b), u)) pre.push_back(r);
    for (const auto& r : mm(mat(s.w_c), u)) pre.push_back(r);
  }
  Mat act = pre;
  const std::size_t K = s.conv_kernel.defined() ? s.conv_kernel.cols() : 0;
  for (std::size_t ch = 0; ch < pre.size(); ++ch)
    for (std::size_t t = 0; t < T; ++t) {
      double v = pre[ch][t];
      if (K > 0) {
        v = s.conv_bias[ch];
        for (std::size_t j = 0; j < K; ++j)
          if (t + j + 1 >= K) v += s.conv_kernel(ch, j) * pre[ch][t + j + 1 - K];
      }
      act[ch][t] = silu(v);
    }
  const std::size_t E = xs.size(), N = s.w_b.rows();
  Mat xc(act.begin(), act.begin() + long(E)), b, c;
  if (mamba2) {
    b.assign(act.begin() + long(E), act.begin() + long(E + N));
    c.assign(act.begin() + long(E + N), act.end());
  } else {
    b = mm(mat(s.w_b), xc);
    c = mm(mat(s.w_c), xc);
  }
  Mat delta = mm(mat(s.w_delta_up), mm(mat(s.w_delta_down), mamba2 ? u : xc));
  for (std::size_t g = 0; g < delta.size(); ++g)
    for (auto& v : delta[g]) v = softplus(v + s.b_delta[g]);
  Mat gated(E, std::vector<double>(T));
  for (std::size_t e = 0; e < E; ++e) {
    const std::size_t g = mamba2 ? e / s.head_dim : e;
    std::vector<double> h(N, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      double y = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const double a = -std::exp(mamba2 ? s.a_log[g] : s.a_log(e, n));
        h[n] = std::exp(a * delta[g][t]) * h[n] + delta[g][t] * b[n][t] * xc[e][t];
        y += c[n][t] * h[n];
      }
      gated[e][t] = y * silu(z[e][t]);
    }
  }
  if (blk.out_norm.defined()) gated = rmsnorm(gated, blk.out_norm);
  Mat out = mm(mat(blk.w_out), gated);
  for (std::size_t d = 0; d < out.size(); ++d)
    for (std::size_t t = 0; t < T; ++t) out[d][t] += x[d][t];
  return out;
}

ModelConfig tiny(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.n_layers = 3;
  c.d_model = 8;
  c.d_state = 3;
  c.head_dim = 4;
  c.vocab_size = 7;
  if (v == Variant::hybrid || v == Variant::linear_attn_hybrid) c.attn_layer_index = 1;
  return c;
}

// Random values everywhere, so no parameter is trivially zero or one.
template <typename T>
void randomize(Model<T>& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, p] : m.named_parameters()) {
    auto t = p;
    for (auto& v : t.data()) v = T(0.4 * rng.normal());
  }
  for (auto& [name, p] : m.named_parameters()) {
    if (name.find("a_log") != std::string::npos || name.find("norm") != std::string::npos) {
      auto t = p;
      for (auto& v : t.data()) v = T(1) + v;
    }
  }
}

TokenBatch random_tokens(std::size_t batch, std::size_t len, int vocab, std::uint64_t seed) {
  TokenBatch tb;
  tb.seq_len = len;
  Rng rng(seed);
  for (std::size_t i = 0; i < batch * len; ++i) tb.ids.push_back(int(rng.below(std::uint64_t(vocab))));
  return tb;
}

const Variant kVariants[] = {Variant::mamba1, Variant::mamba2, Variant::hybrid, Variant::linear_attn_hybrid};

}  // namespace

TEST(Model, BlockMatchesTranscription) {
  for (Variant v : {Variant::mamba1, Variant::mamba2}) {
    for (bool out_norm : {false, true}) {
      ModelConfig cfg = tiny(v);
      cfg.n_layers = 1;
      cfg.mamba2_out_norm = out_norm;
      Model<double> m(cfg);
      randomize(m, 3);
      const TokenBatch tb = random_tokens(1, 9, cfg.vocab_size, 4);
      const TD logits = m.forward(tb);

      Mat x(8, std::vector<double>(9));
      for (std::size_t t = 0; t < 9; ++t)
        for (std::size_t d = 0; d < 8; ++d) x[d][t] = m.embedding(std::size_t(tb.ids[t]), d);
      const Mat h = rmsnorm(block_oracle(std::get<MambaBlock<double>>(m.layers[0]), x), m.final_norm);
      for (std::size_t t = 0; t < 9; ++t)
        for (std::size_t k = 0; k < 7; ++k) {
          double ref = 0;
          for (std::size_t d = 0; d < 8; ++d) ref += h[d][t] * m.head(d, k);
          EXPECT_NEAR(logits(t, k), ref, 1e-10) << to_string(v);
        }
    }
  }
}

TEST(Model, ShapesAndParameterNames) {
  for (Variant v : kVariants) {
    Model<double> m(tiny(v));
    default_init(m, 1);
    const TD logits = m.forward(random_tokens(2, 5, 7, 2));
    EXPECT_EQ(logits.shape(), (Shape{10, 7})) << to_string(v);
    EXPECT_EQ(m.named_parameters().front().first, "embedding");
    EXPECT_EQ(m.named_parameters().back().first, "head");
  }
  Model<double> h(tiny(Variant::hybrid));
  const auto names = h.named_parameters();
  auto has = [&](const std::string& n) {
    for (auto& [name, p] : names)
      if (name == n) return true;
    return false;
  };
  EXPECT_TRUE(has("layers.1.w_q"));
  EXPECT_TRUE(has("layers.0.w_b"));
  EXPECT_TRUE(has("layers.2.out_norm"));
  EXPECT_FALSE(has("layers.1.w_b"));
}

TEST(Model, HybridDiffersOnlyAtAttentionLayer) {
  Model<double> pure(tiny(Variant::mamba2)), hyb(tiny(Variant::hybrid));
  auto count_prefix = [](const Model<double>& m, const std::string& prefix) {
    std::size_t n = 0;
    for (auto& [name, p] : m.named_parameters())
      if (name.rfind(prefix, 0) == 0) n += p.numel();
    return n;
  };
  for (const char* p : {"layers.0.", "layers.2.", "embedding", "final_norm", "head"}) {
    EXPECT_EQ(count_prefix(pure, p), count_prefix(hyb, p)) << p;
  }
  EXPECT_EQ(count_prefix(hyb, "layers.1."), 8u + 4 * 64);
}

TEST(Model, Causal) {
  for (Variant v : kVariants) {
    Model<double> m(tiny(v));
    randomize(m, 5);
    TokenBatch tb = random_tokens(1, 8, 7, 6);
    const TD a = m.forward(tb);
    tb.ids[5] = (tb.ids[5] + 1) % 7;
    const TD b = m.forward(tb);
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(a(t, k), b(t, k)) << to_string(v);
    double diff = 0;
    for (std::size_t k = 0; k < 7; ++k) diff += std::abs(a(5, k) - b(5, k));
    EXPECT_GT(diff, 0.0);
  }
}

TEST(Model, SequencesInBatchAreIndependent) {
  for (Variant v : kVariants) {
    Model<double> m(tiny(v));
    randomize(m, 7);
    const TokenBatch both = random_tokens(2, 6, 7, 8);
    TokenBatch second;
    second.seq_len = 6;
    second.ids.assign(both.ids.begin() + 6, both.ids.end());
    const TD a = m.forward(both), b = m.forward(second);
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t k = 0; k < 7; ++k) EXPECT_NEAR(a(6 + t, k), b(t, k), 1e-12) << to_string(v);
  }
}

TEST(Model, ResidualIdentityWithZeroOutput) {
  Model<double> m(tiny(Variant::mamba1));
  randomize(m, 9);
  for (auto& layer : m.layers) {
    auto w = std::get<MambaBlock<double>>(layer).w_out;
    for (auto& v : w.data()) v = 0;
  }
  const TokenBatch tb = random_tokens(1, 4, 7, 10);
  const TD logits = m.forward(tb);
  const TD ref = ops::matmul(ops::transpose(ops::rms_norm(ops::embedding(m.embedding, tb.ids), m.final_norm)), m.head);
  EXPECT_LT(mssm::testing::max_abs_diff(logits, ref), 1e-14);
}

TEST(Model, UntrainedLossNearLogVocab) {
  ModelConfig cfg = tiny(Variant::mamba2);
  cfg.d_model = 32;
  cfg.vocab_size = 16;
  Model<double> m(cfg);
  default_init(m, 11);
  const TokenBatch tb = random_tokens(4, 16, 16, 12);
  std::vector<int> targets(tb.ids.begin() + 1, tb.ids.end());
  targets.push_back(0);
  const std::vector<std::uint8_t> mask(targets.size(), 1);
  const double loss = ops::cross_entropy(m.forward(tb), targets, mask).item();
  EXPECT_NEAR(loss, std::log(16.0), 0.5);
}

TEST(Model, RejectsBadTokens) {
  Model<double> m(tiny(Variant::mamba1));
  TokenBatch tb;
  tb.seq_len = 2;
  tb.ids = {1, 7};
  EXPECT_THROW(m.forward(tb), Error);
  tb.ids = {1, 2, 3};
  EXPECT_THROW(m.forward(tb), DimensionError);
}

TEST(Model, ConfigValidation) {
  ModelConfig c = tiny(Variant::mamba2);
  c.head_dim = 5;
  EXPECT_THROW(Model<double>{c}, ConfigError);
  c = tiny(Variant::hybrid);
  c.attn_layer_index = 3;
  try {
    Model<double>{c};
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "model.attn_layer_index");
  }
}

TEST(Decoder, StepLogitsMatchForward) {
  for (Variant v : kVariants) {
    Model<double> m(tiny(v));
    randomize(m, 13);
    const TokenBatch tb = random_tokens(3, 7, 7, 14);
    const TD full = m.forward(tb);
    Decoder<double> dec(m, 3);
    for (std::size_t t = 0; t < 7; ++t) {
      const std::vector<int> col{tb.ids[t], tb.ids[7 + t], tb.ids[14 + t]};
      const TD step = dec.step(col);
      for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t k = 0; k < 7; ++k) EXPECT_NEAR(step(s, k), full(s * 7 + t, k), 1e-11) << to_string(v);
    }
    EXPECT_EQ(dec.position(), 7u);
  }
}

TEST(Decoder, FloatMatchesForward) {
  Model<float> m(tiny(Variant::mamba2));
  apply_init(InitFlags::preset("mimetic-mamba2"), m, 15);
  const TokenBatch tb = random_tokens(1, 6, 7, 16);
  const Tensor<float> full = m.forward(tb);
  Decoder<float> dec(m, 1);
  for (std::size_t t = 0; t < 6; ++t) {
    const Tensor<float> step = dec.step(std::vector<int>{tb.ids[t]});
    for (std::size_t k = 0; k < 7; ++k) EXPECT_NEAR(step(0, k), full(t, k), 1e-4);
  }
}

TEST(GreedyDecode, StopsAndTies) {
  Model<double> m(tiny(Variant::mamba1));
  randomize(m, 17);
  const std::vector<int> prompt{1, 2, 3};
  EXPECT_TRUE(greedy_decode(m, std::span<const int>(prompt), 0, 6).empty());
  const auto a = greedy_decode(m, std::span<const int>(prompt), 5, -1);
  EXPECT_EQ(a.size(), 5u);
  EXPECT_EQ(a, greedy_decode(m, std::span<const int>(prompt), 5, -1));

  // Zero final norm: every logit is 0 and ties go to token 0, the stop token.
  for (auto& v : m.final_norm.data()) v = 0;
  EXPECT_TRUE(greedy_decode(m, std::span<const int>(prompt), 5, 0).empty());
  const auto z = greedy_decode(m, std::span<const int>(prompt), 3, 6);
  EXPECT_EQ(z, (std::vector<int>{0, 0, 0}));
}

TEST(GreedyDecode, MatchesArgmaxOfForward) {
  Model<double> m(tiny(Variant::hybrid));
  randomize(m, 19);
  std::vector<int> seq{4, 2, 6};
  const auto out = greedy_decode(m, std::span<const int>(seq), 4, -1);
  for (int tok : out) {
    TokenBatch tb;
    tb.seq_len = seq.size();
    tb.ids = seq;
    const TD logits = m.forward(tb);
    std::vector<double> last(7);
    for (std::size_t k = 0; k < 7; ++k) last[k] = logits(seq.size() - 1, k);
    EXPECT_EQ(tok, int(argmax<double>(last)));
    seq.push_back(tok);
  }
  const std::vector<double> tie{1, 3, 3, 2};
  EXPECT_EQ(argmax<double>(tie), 1u);
}

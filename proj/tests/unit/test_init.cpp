#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "mssm/error.hpp"
#include "mssm/init.hpp"
#include "mssm/ops.hpp"

using namespace mssm;
using TD = Tensor<double>;

namespace {

ModelConfig config(Variant v, int conv_width = 4) {
  ModelConfig c;
  c.variant = v;
  c.n_layers = 2;
  c.d_model = 16;
  c.d_state = 4;
  c.head_dim = 8;
  c.vocab_size = 5;
  c.conv_width = conv_width;
  return c;
}

std::map<std::string, std::vector<double>> snapshot(const Model<double>& m) {
  std::map<std::string, std::vector<double>> out;
  for (auto& [name, p] : m.named_parameters()) out[name].assign(p.data().begin(), p.data().end());
  return out;
}

const SsmLayerParams<double>& ssm(const Model<double>& m, std::size_t i) {
  return std::get<MambaBlock<double>>(m.layers[i]).ssm;
}

}  // namespace

TEST(InitFlags, Presets) {
  const auto m1 = InitFlags::preset("mimetic-mamba1");
  EXPECT_TRUE(m1.a_near_one && m1.delta_near_one && m1.qk_correlated);
  EXPECT_FALSE(m1.conv_identity);
  const auto m2 = InitFlags::preset("mimetic-mamba2");
  EXPECT_EQ(m2.mask(), 15u);
  EXPECT_EQ(m2.c, 8.0);
  EXPECT_EQ(InitFlags::preset("default").mask(), 0u);
  EXPECT_THROW(InitFlags::preset("mimetic"), ConfigError);
}

TEST(InitFlags, MaskRoundTripAndJson) {
  for (unsigned mask = 0; mask < 16; ++mask) {
    const auto f = InitFlags::from_mask(mask, 4.0);
    EXPECT_EQ(f.mask(), mask);
    EXPECT_EQ(InitFlags::from_json(f.to_json()), f);
  }
  EXPECT_EQ(InitFlags::from_mask(5).describe(), "a+qk");
  EXPECT_EQ(InitFlags::from_mask(0).describe(), "default");
  EXPECT_EQ(InitFlags::from_json(nlohmann::json("mimetic-mamba2")), InitFlags::preset("mimetic-mamba2"));
  const auto j = nlohmann::json{{"preset", "mimetic-mamba2"}, {"conv_identity", false}};
  EXPECT_EQ(InitFlags::from_json(j).mask(), 7u);
  try {
    InitFlags::from_json(nlohmann::json{{"c", -1.0}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "init.c");
  }
}

TEST(DefaultInit, DecayPatterns) {
  Model<double> m1(config(Variant::mamba1));
  default_init(m1, 3);
  const auto& s1 = ssm(m1, 0);
  for (std::size_t e = 0; e < s1.a_log.rows(); ++e) {
    EXPECT_EQ(s1.a_log(e, 0), 0.0);
    for (std::size_t n = 0; n < s1.a_log.cols(); ++n) EXPECT_NEAR(s1.a_log(e, n), std::log(double(n + 1)), 1e-15);
  }
  Model<double> m2(config(Variant::mamba2));
  default_init(m2, 3);
  for (double v : ssm(m2, 1).a_log.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, std::log(16.0));
  }
}

TEST(DefaultInit, StepSizeRange) {
  Model<double> m(config(Variant::mamba1));
  default_init(m, 4);
  for (std::size_t i = 0; i < 2; ++i)
    for (double b : ssm(m, i).b_delta.data()) {
      const double dt = std::log1p(std::exp(b));
      EXPECT_GT(dt, 0.9e-3);
      EXPECT_LT(dt, 0.11);
    }
}

TEST(DefaultInit, VariancesAndDeterminism) {
  ModelConfig c = config(Variant::mamba2);
  c.d_model = 64;
  c.d_state = 32;
  Model<double> m(c), again(c);
  default_init(m, 5);
  default_init(again, 5);
  EXPECT_EQ(snapshot(m), snapshot(again));
  auto variance = [](const TD& t) {
    double s = 0;
    for (double v : t.data()) s += v * v;
    return s / double(t.numel());
  };
  const auto& s = ssm(m, 0);
  EXPECT_NEAR(variance(s.w_b), 1.0 / 32, 0.15 / 32);
  EXPECT_NEAR(variance(std::get<MambaBlock<double>>(m.layers[0]).w_x), 1.0 / 64, 0.1 / 64);
}

TEST(MimeticInit, LinearAttentionMode) {
  Model<double> base(config(Variant::mamba1)), m(config(Variant::mamba1));
  default_init(base, 6);
  default_init(m, 6);
  auto& s = std::get<MambaBlock<double>>(m.layers[0]).ssm;
  init_linear_attention_mode(s, 8.0);
  const auto& s0 = ssm(base, 0);
  for (std::size_t i = 0; i < s.a_log.numel(); ++i) EXPECT_DOUBLE_EQ(s.a_log[i], -8.0 * s0.a_log[i]);
  for (std::size_t i = 0; i < s.w_delta_up.numel(); ++i) EXPECT_DOUBLE_EQ(s.w_delta_up[i], 1e-4 * s0.w_delta_up[i]);
  for (std::size_t i = 0; i < s.w_delta_down.numel(); ++i) EXPECT_EQ(s.w_delta_down[i], s0.w_delta_down[i]);
  for (double b : s.b_delta.data()) {
    EXPECT_NEAR(b, std::log(std::exp(1.0) - 1.0), 1e-15);
    EXPECT_NEAR(std::log1p(std::exp(b)), 1.0, 1e-12);
  }
  // Entry with default A_log = log 2: A = -2^-8.
  EXPECT_NEAR(-std::exp(s.a_log(0, 1)), -std::pow(2.0, -8), 1e-15);
  EXPECT_NEAR(std::exp(-std::exp(s.a_log(0, 1))), 0.99610, 1e-5);
}

TEST(MimeticInit, FloorOption) {
  Model<double> m(config(Variant::mamba1));
  default_init(m, 7);
  auto& s = std::get<MambaBlock<double>>(m.layers[0]).ssm;
  init_a_near_one(s, 2.0, true);
  EXPECT_NEAR(s.a_log(0, 0), -2.0 * std::log(2.0), 1e-15);
  EXPECT_NEAR(s.a_log(0, 2), -2.0 * std::log(3.0), 1e-15);
  EXPECT_THROW(init_a_near_one(s, 0.0), ConfigError);
}

TEST(MimeticInit, CorrelatedQueryKey) {
  Model<double> m(config(Variant::mamba2));
  const std::uint64_t seed = 8;
  apply_init(InitFlags::from_mask(4), m, seed);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& s = ssm(m, i);
    const std::string p = "layers." + std::to_string(i) + ".";
    Rng prime = Rng(seed).substream(p + "w_c_prime");
    const double sd = std::sqrt(1.0 / 4.0);
    for (std::size_t k = 0; k < s.w_c.numel(); ++k) {
      EXPECT_NEAR(s.w_c[k], (prime.normal() * sd + s.w_b[k]) / 2, 1e-15);
    }
  }
}

TEST(MimeticInit, CorrelationStatistics) {
  // cos(W_C row, W_B row) -> 1/sqrt(2); diag of W_C^T W_B has mean 1/2 per
  // unit of N * (1/N) variance.
  ModelConfig c = config(Variant::mamba1);
  c.d_model = 64;
  c.d_state = 32;
  c.conv_width = 0;
  double cos_sum = 0, diag_sum = 0;
  int rows = 0, diags = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Model<double> m(c);
    apply_init(InitFlags::from_mask(4), m, seed);
    const auto& s = ssm(m, 0);
    const std::size_t N = s.w_b.rows(), P = s.w_b.cols();
    for (std::size_t r = 0; r < N; ++r) {
      double dot = 0, nb = 0, nc = 0;
      for (std::size_t k = 0; k < P; ++k) {
        dot += s.w_b(r, k) * s.w_c(r, k);
        nb += s.w_b(r, k) * s.w_b(r, k);
        nc += s.w_c(r, k) * s.w_c(r, k);
      }
      cos_sum += dot / std::sqrt(nb * nc);
      ++rows;
    }
    for (std::size_t k = 0; k < P; ++k) {
      double d = 0;
      for (std::size_t r = 0; r < N; ++r) d += s.w_c(r, k) * s.w_b(r, k);
      diag_sum += d;
      ++diags;
    }
  }
  EXPECT_NEAR(cos_sum / rows, 1 / std::sqrt(2.0), 0.03);
  EXPECT_NEAR(diag_sum / diags, 0.5, 0.05);
}

TEST(MimeticInit, ConvIdentity) {
  Model<double> m(config(Variant::mamba2));
  apply_init(InitFlags::from_mask(8), m, 9);
  const auto& s = ssm(m, 0);
  for (std::size_t ch = 0; ch < s.conv_kernel.rows(); ++ch) {
    double sum = 0;
    for (std::size_t j = 0; j < s.conv_kernel.cols(); ++j) sum += s.conv_kernel(ch, j);
    EXPECT_EQ(sum, 1.0);
    EXPECT_EQ(s.conv_kernel(ch, s.conv_kernel.cols() - 1), 1.0);
    EXPECT_EQ(s.conv_bias[ch], 0.0);
  }
  const TD x = mssm::testing::random_tensor({s.conv_kernel.rows(), 14}, 10);
  EXPECT_EQ(mssm::testing::max_abs_diff(ops::depthwise_conv1d(x, s.conv_kernel, s.conv_bias, 7), x), 0.0);

  // Every tap still receives gradient.
  TD k = s.conv_kernel.detach(), b = s.conv_bias.detach();
  k.set_requires_grad(true);
  const TD w = mssm::testing::random_tensor({s.conv_kernel.rows(), 14}, 11);
  backward(ops::sum(ops::mul(ops::depthwise_conv1d(x, k, b, 7), w)));
  for (std::size_t ch = 0; ch < k.rows(); ++ch)
    for (std::size_t j = 0; j < k.cols(); ++j) EXPECT_NE(k.grad()[ch * k.cols() + j], 0.0);

  Model<double> no_conv(config(Variant::mamba2, 0));
  EXPECT_THROW(apply_init(InitFlags::preset("mimetic-mamba2"), no_conv, 1), ConfigError);
  EXPECT_NO_THROW(apply_init(InitFlags::preset("mimetic-mamba1"), no_conv, 1));
}

TEST(MimeticInit, ComponentsOwnDisjointParameters) {
  // conv_bias is zero under both the default and the identity init.
  const std::map<unsigned, std::vector<std::string>> owned = {
      {1, {"a_log"}}, {2, {"w_delta_up", "b_delta"}}, {4, {"w_c"}}, {8, {"conv_kernel"}}};
  Model<double> base(config(Variant::mamba2));
  apply_init(InitFlags::from_mask(0), base, 12);
  const auto ref = snapshot(base);
  for (auto& [bit, names] : owned) {
    Model<double> m(config(Variant::mamba2));
    apply_init(InitFlags::from_mask(bit), m, 12);
    for (auto& [name, values] : snapshot(m)) {
      bool owns = false;
      for (auto& n : names) owns = owns || name.size() >= n.size() && name.compare(name.size() - n.size(), n.size(), n) == 0;
      if (owns) {
        EXPECT_NE(values, ref.at(name)) << name << " bit " << bit;
      } else {
        EXPECT_EQ(values, ref.at(name)) << name << " bit " << bit;
      }
    }
  }
  Model<double> d(config(Variant::mamba2));
  default_init(d, 12);
  EXPECT_EQ(snapshot(d), ref);
}

TEST(MimeticInit, FloatAndDoubleAgree) {
  Model<double> md(config(Variant::mamba2));
  Model<float> mf(config(Variant::mamba2));
  apply_init(InitFlags::preset("mimetic-mamba2"), md, 13);
  apply_init(InitFlags::preset("mimetic-mamba2"), mf, 13);
  const auto pd = md.named_parameters();
  const auto pf = mf.named_parameters();
  ASSERT_EQ(pd.size(), pf.size());
  for (std::size_t i = 0; i < pd.size(); ++i)
    for (std::size_t k = 0; k < pd[i].second.numel(); ++k)
      EXPECT_NEAR(pf[i].second[k], pd[i].second[k], 1e-6 * (1 + std::abs(pd[i].second[k]))) << pd[i].first;
}

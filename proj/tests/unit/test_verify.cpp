#include <gtest/gtest.h>

#include <cmath>

#include "mssm/error.hpp"
#include "mssm/verify.hpp"

using namespace mssm;

TEST(Verify, ScanMatrix) {
  const auto r = verify_scan_matrix(20, 1);
  EXPECT_TRUE(r.passed()) << r.to_string();
  EXPECT_GE(r.instances, 20u);
}

TEST(Verify, Gradients) {
  const auto r = verify_gradients(2);
  EXPECT_TRUE(r.passed()) << r.to_string();
}

TEST(Verify, LinearAttentionLimit) {
  // An entry with default A_log = log 2 decays by exp(-2^-c) per step, so the
  // gap to linear attention shrinks like 2^-c.
  const auto loose = verify_linear_attention_limit(8.0, 3, 2);
  const auto tight = verify_linear_attention_limit(16.0, 3, 2);
  EXPECT_TRUE(tight.passed()) << tight.to_string();
  EXPECT_GT(loose.checks.back().measured, 100 * tight.checks.back().measured);
  EXPECT_LT(loose.checks.back().measured, 1 - std::exp(-63.0 / 256));
}

TEST(Verify, LinearAttentionLimitNeedsLargeC) {
  // At c = 1 decay is far from one and the limit does not hold.
  const auto r = verify_linear_attention_limit(1.0, 3, 1);
  EXPECT_FALSE(r.passed());
}

TEST(Verify, InitStats) {
  const auto r = verify_init_stats(5, 4);
  EXPECT_TRUE(r.passed()) << r.to_string();
}

TEST(Verify, Dispatch) {
  EXPECT_EQ(verify_modes(), (std::vector<std::string>{"grad", "scan-matrix", "lin-attn-limit", "init-stats"}));
  EXPECT_THROW(run_verify("nope"), Error);
}

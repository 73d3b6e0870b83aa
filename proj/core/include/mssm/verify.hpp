#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mssm/tensor.hpp"

// Invariant suites run at f64 by `mssm verify` and the acceptance binary.
namespace mssm {

struct VerifyCheck {
  std::string name;
  double measured = 0.0;
  std::string bound;  // human-readable acceptance bound
  bool passed = false;
  std::string worst;  // instance that produced `measured`
};

struct VerifyReport {
  std::string suite;
  std::vector<VerifyCheck> checks;
  std::size_t instances = 0;

  bool passed() const;
  std::string to_string() const;
};

/// selective_scan vs. M X on random instances (T <= 64, E <= 8, N <= 4);
/// both decay kinds, the plain and the fused scan. Bound: 1e-10 per entry.
VerifyReport verify_scan_matrix(int instances = 100, std::uint64_t seed = 0);

/// Central differences (h = 1e-5) against every primitive (bound 1e-4) and
/// a 2-layer D = 8, N = 2, T = 6, vocab 5 model of each variant (bound
/// 1e-3). Error of a tensor: max |analytic - numeric| / max(|analytic|, |numeric|).
VerifyReport verify_gradients(std::uint64_t seed = 0);

/// Per-channel attention matrices of mimetic-initialized SSM layers against
/// the causal linear-attention scores, restricted to state entries whose
/// default A_log is at least log 2. Input to the step-size projection is 0.
/// Error of a channel: max |M - S| / max |S|. Bound: 1e-2 for T <= 64.
VerifyReport verify_linear_attention_limit(double c = 8.0, std::uint64_t seed = 0, int seeds = 5);

/// softplus(b_delta) = 1 +- 1e-6, W_C/W_B row cosine mean in [0.65, 0.76]
/// (N = 32, D = 128, `seeds` seeds), identity conv exactly reproduces its
/// input, default step sizes within (0.9e-3, 0.11).
VerifyReport verify_init_stats(int seeds = 20, std::uint64_t seed = 0);

std::vector<std::string> verify_modes();
/// Dispatches on "grad", "scan-matrix", "lin-attn-limit" or "init-stats".
VerifyReport run_verify(const std::string& mode, std::uint64_t seed = 0);

/// Finite-difference gradient check of `f` at `inputs`. The scalar loss is
/// sum(f(inputs) * W) for a fixed random W. Returns the worst tensor error
/// and writes its input index to `worst_input` when non-null.
double gradient_error(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                      std::vector<Tensor<double>> inputs, std::uint64_t seed, double h = 1e-5,
                      std::size_t* worst_input = nullptr);

}  // namespace mssm

#pragma once

#include <cstddef>
#include <vector>

#include "mssm/tensor.hpp"

namespace mssm {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers for one parameter list.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update. Parameters without a gradient are
/// treated as having a zero gradient.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr,
               const AdamOptions& options = {});

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm);

template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>> params, AdamOptions options = {})
      : params_(std::move(params)), options_(options) {}

  void step(double lr) { adam_step(params_, state_, lr, options_); }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  std::vector<Tensor<T>>& params() { return params_; }
  const AdamState<T>& state() const { return state_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions options_;
  AdamState<T> state_;
};

}  // namespace mssm

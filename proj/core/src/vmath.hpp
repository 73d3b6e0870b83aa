#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace mssm::detail {

// Polynomial exp that GCC can vectorize under `omp simd` (needs
// -fno-trapping-math). About 1 ulp for float up to x = 88, where it
// saturates to inf. Doubles go through std::exp.
inline float vexp(float x) {
  constexpr float log2e = 1.44269504088896341f;
  constexpr float ln2_hi = 0.693359375f, ln2_lo = -2.12194440e-4f;
  const float xc = x > 88.0f ? 88.0f : (x < -87.0f ? -87.0f : x);
  const float k = std::floor(xc * log2e + 0.5f);
  const float r = xc - k * ln2_hi - k * ln2_lo;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const float scale = std::bit_cast<float>((static_cast<std::int32_t>(k) + 127) << 23);
  float out = p * scale;
  out = x < -87.0f ? 0.0f : out;
  out = x > 88.0f ? HUGE_VALF : out;
  return x != x ? x : out;
}

inline double vexp(double x) { return std::exp(x); }

template <typename T>
inline T vsigmoid(T x) {
  return T(1) / (T(1) + vexp(-x));
}

}  // namespace mssm::detail

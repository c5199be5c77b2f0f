#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "scattnet/tensor.hpp"

namespace scattnet {

// Explicit Box-Muller over mt19937_64 output: the whole draw sequence is
// fixed by the standard, so initialization is bit-reproducible per seed.
inline float normal_sample(std::mt19937_64& rng) {
  // (0,1] uniforms
  double u1 = (static_cast<double>(rng() >> 11) + 1.0) / 9007199254740993.0;
  double u2 = static_cast<double>(rng() >> 11) / 9007199254740992.0;
  return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                            std::cos(2.0 * M_PI * u2));
}

// Kaiming fan-in scaling for ReLU stacks.
inline void fill_kaiming(Tensor& t, int fan_in, std::mt19937_64& rng) {
  const float std_dev = std::sqrt(2.0f / static_cast<float>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std_dev * normal_sample(rng);
}

}  // namespace scattnet

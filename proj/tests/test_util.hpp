#pragma once

#include <random>

#include "spotlight/tensor.hpp"

namespace spotlight::testing {

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(s);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace spotlight::testing

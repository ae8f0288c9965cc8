#pragma once

#include "bdl/data.hpp"

namespace bdl {

// Procedurally rendered handwritten-style digits, 28x28 grayscale in
// [0,1]. Each sample draws a digit skeleton through a random affine
// distortion with varying stroke thickness, ink level and pixel noise,
// so a small CNN lands in the mid-90s instead of saturating.
struct DigitGenConfig {
  int64_t count = 60000;
  uint64_t seed = 0;
  double difficulty = 1.0;  // scales distortion ranges
};

Dataset generate_digits(const DigitGenConfig& config);

}  // namespace bdl

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "birq/matrix.hpp"

namespace birq::masking {

struct MaskPolicy {
  double start_prob = 0.02;    // per-frame span-start probability
  std::size_t span = 20;       // in unstacked frames
  std::size_t stack_factor = 2;
  double noise_mean = 0.0;
  double noise_std = 0.1;      // standard deviation of the fill
  bool exact_count = false;    // round(start_prob * T) starts instead of Bernoulli starts
};

void validate(const MaskPolicy& p);

/// Span length in stacked frames: max(1, span / stack_factor).
[[nodiscard]] std::size_t effective_span(const MaskPolicy& p);

/// Masked frame indices, sorted ascending, no duplicates.
struct MaskSpec {
  std::vector<std::size_t> masked;
};

inline constexpr int kMaxMaskRetries = 10;

/// Never returns an empty mask: after kMaxMaskRetries empty draws, a single
/// span at a uniformly drawn start is forced.
[[nodiscard]] MaskSpec sample_mask(const MaskPolicy& p, std::size_t frames, std::uint64_t seed);

/// Replaces masked rows of x (frames x dims) with i.i.d. normal draws.
[[nodiscard]] Matrix apply_mask(const Matrix& x, const MaskSpec& m, const MaskPolicy& p,
                                std::uint64_t seed);

}  // namespace birq::masking

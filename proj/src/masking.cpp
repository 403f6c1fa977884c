#include "birq/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "birq/rng.hpp"

namespace birq::masking {

void validate(const MaskPolicy& p) {
  if (!(p.start_prob >= 0.0 && p.start_prob <= 1.0)) {
    throw ConfigError("mask policy: start_prob must be in [0, 1]");
  }
  if (p.span < 1) throw ConfigError("mask policy: span must be >= 1");
  if (p.stack_factor < 1) throw ConfigError("mask policy: stack_factor must be >= 1");
  if (!(p.noise_std >= 0.0)) throw ConfigError("mask policy: noise_std must be >= 0");
}

std::size_t effective_span(const MaskPolicy& p) { return std::max<std::size_t>(1, p.span / p.stack_factor); }

namespace {

std::vector<std::size_t> draw_starts(const MaskPolicy& p, std::size_t frames, rng::Engine& eng) {
  std::vector<std::size_t> starts;
  if (p.exact_count) {
    const auto count = std::min<std::size_t>(
        frames, static_cast<std::size_t>(std::llround(p.start_prob * static_cast<double>(frames))));
    std::vector<std::size_t> all(frames);
    std::iota(all.begin(), all.end(), std::size_t{0});
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, frames - 1);
      std::swap(all[i], all[pick(eng)]);
    }
    starts.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count));
  } else {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t t = 0; t < frames; ++t) {
      if (unif(eng) < p.start_prob) starts.push_back(t);
    }
  }
  return starts;
}

MaskSpec union_of_spans(const std::vector<std::size_t>& starts, std::size_t span, std::size_t frames) {
  std::vector<char> hit(frames, 0);
  for (std::size_t s : starts) {
    for (std::size_t t = s; t < std::min(s + span, frames); ++t) hit[t] = 1;
  }
  MaskSpec m;
  for (std::size_t t = 0; t < frames; ++t) {
    if (hit[t]) m.masked.push_back(t);
  }
  return m;
}

}  // namespace

MaskSpec sample_mask(const MaskPolicy& p, std::size_t frames, std::uint64_t seed) {
  validate(p);
  if (frames < 1) throw ParameterError("sample_mask: need at least one frame");
  const std::size_t span = effective_span(p);
  rng::Engine eng(seed);
  for (int attempt = 0; attempt <= kMaxMaskRetries; ++attempt) {
    MaskSpec m = union_of_spans(draw_starts(p, frames, eng), span, frames);
    if (!m.masked.empty()) return m;
  }
  std::uniform_int_distribution<std::size_t> pick(0, frames - 1);
  return union_of_spans({pick(eng)}, span, frames);
}

Matrix apply_mask(const Matrix& x, const MaskSpec& m, const MaskPolicy& p, std::uint64_t seed) {
  Matrix out = x;
  rng::Engine eng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t t : m.masked) {
    if (t >= x.rows()) throw ShapeError("apply_mask: masked index out of range");
    for (double& v : out.row(t)) v = p.noise_mean + p.noise_std * normal(eng);
  }
  return out;
}

}  // namespace birq::masking

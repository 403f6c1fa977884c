#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace birq::rng {

using Engine = std::mt19937_64;

/// Stream tags for the counter-based seed splitter. Every stochastic draw in a
/// run is keyed by (base seed, role, epoch, step, index) so any step can be
/// replayed without replaying its predecessors.
enum class Role : std::uint64_t {
  shuffle = 1,
  mask = 2,
  noise_fill = 3,
  gumbel = 4,
  init = 5,
  codebook = 6,
  projection_anchor = 7,
  projection_enhance = 8,
  data = 9,
  centroids = 10,
  chain = 11,
};

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

[[nodiscard]] constexpr std::uint64_t derive(std::uint64_t base,
                                             std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

[[nodiscard]] constexpr std::uint64_t derive(std::uint64_t base, Role role,
                                             std::uint64_t epoch = 0, std::uint64_t step = 0,
                                             std::uint64_t index = 0) noexcept {
  return derive(base, {static_cast<std::uint64_t>(role), epoch, step, index});
}

}  // namespace birq::rng

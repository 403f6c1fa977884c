#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "birq/features.hpp"
#include "birq/trainer.hpp"

// Flat `key = value` run configuration. Parsing starts from the defaults,
// rejects unknown or repeated keys, then freezes: role seeds left unset are
// derived from `seed`, and the result is validated before anything runs.

namespace birq::config {

struct RunConfig {
  trainer::TrainConfig train;
  features::SynthSpec synth;
  std::uint64_t base_seed = 0;
};

struct KeyDoc {
  std::string key;
  std::string default_value;
  std::string description;
};

/// Every accepted key with its default, in file order.
[[nodiscard]] const std::vector<KeyDoc>& documented_keys();

/// Replaces `seed` and re-derives every role seed, ignoring explicit seed.* keys.
struct SeedOverride {
  std::uint64_t base_seed;
};

[[nodiscard]] RunConfig default_config();
[[nodiscard]] RunConfig parse_config(std::string_view text, std::optional<SeedOverride> override = {});
[[nodiscard]] RunConfig load_config(const std::filesystem::path& path,
                                    std::optional<SeedOverride> override = {});

/// Reads BIRQ_BASE_SEED; throws ConfigError when set but not an unsigned integer.
[[nodiscard]] std::optional<SeedOverride> seed_override_from_env();

/// Every key with its effective value, derived quantities as comments.
/// Feeding this text back through parse_config gives the same RunConfig.
[[nodiscard]] std::string render_resolved(const RunConfig& cfg);

[[nodiscard]] bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace birq::config

#pragma once

#include <filesystem>
#include <variant>

#include "birq/quantizer.hpp"

// LABELS container: "BIRQLABL", u32 version = 1, u64 T, u64 N, u8 mode,
// then T u32 indices (mode 0, hard) or T*N f32 rows (mode 1, soft).

namespace birq::labels {

using LabelSet = std::variant<quantizer::HardLabels, quantizer::SoftLabels>;

/// `n` is the codebook size recorded in the header (hard labels carry no width).
void save_labels(const LabelSet& labels, std::size_t n, const std::filesystem::path& path);

struct LoadedLabels {
  LabelSet labels;
  std::size_t n = 0;
};
[[nodiscard]] LoadedLabels load_labels(const std::filesystem::path& path);

}  // namespace birq::labels

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "birq/trainer.hpp"

// Static SVG rendering of a metrics CSV. Two stacked panels (losses on top,
// codebook utilization below), one <path> per series, fixed viewBox and fixed
// number formatting so the same input always yields the same bytes.

namespace birq::plot {

/// Header must match the metrics header exactly; needs at least one row.
[[nodiscard]] std::vector<trainer::MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

[[nodiscard]] std::string render_svg(std::span<const trainer::MetricsRecord> rows);

}  // namespace birq::plot

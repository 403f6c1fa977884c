#include "birq/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

namespace birq::plot {
namespace {

constexpr double kWidth = 800.0;
constexpr double kPanelHeight = 260.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 170.0;  // room for the legend
constexpr double kTop = 30.0;
constexpr double kBottom = 30.0;

struct Series {
  const char* name;
  const char* color;
  double trainer::MetricsRecord::*field;
};

struct Panel {
  const char* title;
  std::vector<Series> series;
};

void render_panel(std::string& out, const Panel& panel, std::span<const trainer::MetricsRecord> rows,
                  double y0) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : panel.series) {
    for (const auto& r : rows) {
      const double v = r.*s.field;
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double step_lo = static_cast<double>(rows.front().step);
  const double step_hi = std::max(step_lo + 1.0, static_cast<double>(rows.back().step));
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kPanelHeight - kTop - kBottom;
  auto px = [&](double step) { return kLeft + (step - step_lo) / (step_hi - step_lo) * plot_w; };
  auto py = [&](double v) { return y0 + kTop + (hi - v) / (hi - lo) * plot_h; };

  out += fmt::format("<g>\n<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"14\">{}</text>\n", kLeft, y0 + 20.0,
                     panel.title);
  out += fmt::format(
      "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"none\" stroke=\"#999\"/>\n", kLeft,
      y0 + kTop, plot_w, plot_h);
  out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"10\" text-anchor=\"end\">{:.4g}</text>\n",
                     kLeft - 4.0, y0 + kTop + 4.0, hi);
  out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"10\" text-anchor=\"end\">{:.4g}</text>\n",
                     kLeft - 4.0, y0 + kTop + plot_h, lo);
  out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"10\">step {}</text>\n", kLeft,
                     y0 + kTop + plot_h + 14.0, rows.front().step);
  out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"10\" text-anchor=\"end\">step {}</text>\n",
                     kLeft + plot_w, y0 + kTop + plot_h + 14.0, rows.back().step);

  double legend_y = y0 + kTop + 10.0;
  for (const auto& s : panel.series) {
    std::string d;
    bool pen_down = false;
    for (const auto& r : rows) {
      const double v = r.*s.field;
      if (!std::isfinite(v)) {
        pen_down = false;
        continue;
      }
      d += fmt::format("{}{:.2f} {:.2f} ", pen_down ? 'L' : 'M', px(static_cast<double>(r.step)), py(v));
      pen_down = true;
    }
    if (!d.empty()) d.pop_back();
    out += fmt::format("<path data-series=\"{}\" d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                       s.name, d, s.color);
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"12\" fill=\"{}\">{}</text>\n",
                       kWidth - kRight + 10.0, legend_y, s.color, s.name);
    legend_y += 16.0;
  }
  out += "</g>\n";
}

}  // namespace

std::vector<trainer::MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError("metrics CSV is empty: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != trainer::kMetricsHeader) throw FormatError("unexpected metrics header in " + path.string());
  std::vector<trainer::MetricsRecord> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(trainer::parse_metrics_row(line));
    if (rows.size() > 1 && rows.back().step <= rows[rows.size() - 2].step) {
      throw FormatError("metrics steps must increase in " + path.string());
    }
  }
  if (rows.empty()) throw FormatError("metrics CSV has no data rows: " + path.string());
  return rows;
}

std::string render_svg(std::span<const trainer::MetricsRecord> rows) {
  if (rows.empty()) throw FormatError("render_svg: no rows");
  using R = trainer::MetricsRecord;
  const Panel losses{"losses",
                     {{"loss_F", "#d62728", &R::loss_F},
                      {"loss_G", "#1f77b4", &R::loss_G},
                      {"loss_total", "#2ca02c", &R::loss_total}}};
  const Panel util{"codebook utilization",
                   {{"codebook_util_anchor", "#9467bd", &R::codebook_util_anchor},
                    {"codebook_util_enh", "#ff7f0e", &R::codebook_util_enh}}};
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {:.0f} {:.0f}\" width=\"{:.0f}\" "
      "height=\"{:.0f}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      kWidth, 2 * kPanelHeight, kWidth, 2 * kPanelHeight);
  render_panel(out, losses, rows, 0.0);
  render_panel(out, util, rows, kPanelHeight);
  out += "</svg>\n";
  return out;
}

}  // namespace birq::plot

#include "birq/labels.hpp"

#include <cmath>
#include <fstream>

#include "birq/binary_io.hpp"

namespace birq::labels {
namespace {
constexpr std::string_view kMagic = "BIRQLABL";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_labels(const LabelSet& labels, std::size_t n, const std::filesystem::path& path) {
  if (n < 1) throw ParameterError("save_labels: N must be >= 1");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  io::write_magic(os, kMagic);
  io::write_le<std::uint32_t>(os, kVersion);
  if (const auto* hard = std::get_if<quantizer::HardLabels>(&labels)) {
    for (auto i : hard->indices) {
      if (i >= n) throw ShapeError("save_labels: index exceeds N");
    }
    io::write_le<std::uint64_t>(os, hard->indices.size());
    io::write_le<std::uint64_t>(os, n);
    io::write_le<std::uint8_t>(os, 0);
    for (auto i : hard->indices) io::write_le<std::uint32_t>(os, i);
  } else {
    const auto& rows = std::get<quantizer::SoftLabels>(labels).rows;
    if (rows.cols() != n) throw ShapeError("save_labels: soft rows must be T x N");
    io::write_le<std::uint64_t>(os, rows.rows());
    io::write_le<std::uint64_t>(os, n);
    io::write_le<std::uint8_t>(os, 1);
    for (double v : rows.values()) io::write_le<float>(os, static_cast<float>(v));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

LoadedLabels load_labels(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  io::expect_magic(is, kMagic);
  if (io::read_le<std::uint32_t>(is, "LABELS version") != kVersion) {
    throw FormatError("unsupported LABELS version in " + path.string());
  }
  const auto T = io::read_le<std::uint64_t>(is, "LABELS T");
  const auto N = io::read_le<std::uint64_t>(is, "LABELS N");
  const auto mode = io::read_le<std::uint8_t>(is, "LABELS mode");
  if (T == 0 || N == 0 || T > (1ULL << 32) || N > (1ULL << 24)) {
    throw FormatError("LABELS header shape implausible in " + path.string());
  }
  LoadedLabels out;
  out.n = N;
  if (mode == 0) {
    quantizer::HardLabels h;
    h.indices.resize(T);
    for (auto& i : h.indices) {
      i = io::read_le<std::uint32_t>(is, "LABELS indices");
      if (i >= N) throw FormatError("LABELS index out of range in " + path.string());
    }
    out.labels = std::move(h);
  } else if (mode == 1) {
    quantizer::SoftLabels s{Matrix(T, N)};
    for (double& v : s.rows.values()) {
      v = io::read_le<float>(is, "LABELS rows");
      if (!std::isfinite(v)) throw FormatError("LABELS rows contain non-finite values");
    }
    out.labels = std::move(s);
  } else {
    throw FormatError("LABELS mode must be 0 or 1 in " + path.string());
  }
  io::expect_eof(is, "LABELS payload");
  return out;
}

}  // namespace birq::labels

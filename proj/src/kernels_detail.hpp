#pragma once

// Per-row routines shared by the serial and OpenMP kernels. Matmul loops are
// written separately in each translation unit; everything here is row-local.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

#include "birq/matrix.hpp"

namespace birq::kernels::detail {

inline void softmax_row(std::span<const double> in, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : in) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t j = 0; j < in.size(); ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  for (double& v : out) v /= sum;
}

inline void log_softmax_row(std::span<const double> in, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : in) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : in) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] - lse;
}

inline void sq_distance_row(std::span<const double> u, const Matrix& codebook,
                            std::span<const double> code_norms, std::span<double> out) {
  double un = 0.0;
  for (double v : u) un += v * v;
  for (std::size_t n = 0; n < codebook.rows(); ++n) {
    auto c = codebook.row(n);
    double dot = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) dot += u[j] * c[j];
    out[n] = un - 2.0 * dot + code_norms[n];
  }
}

inline std::uint32_t argmin_row(std::span<const double> r) {
  std::uint32_t best = 0;
  for (std::size_t j = 1; j < r.size(); ++j) {
    if (r[j] < r[best]) best = static_cast<std::uint32_t>(j);
  }
  return best;
}

inline std::uint32_t argmax_row(std::span<const double> r) {
  std::uint32_t best = 0;
  for (std::size_t j = 1; j < r.size(); ++j) {
    if (r[j] > r[best]) best = static_cast<std::uint32_t>(j);
  }
  return best;
}

/// Owns an FFTW real-to-complex plan plus scratch buffers for one worker.
class FrameTransform {
 public:
  explicit FrameTransform(std::size_t fft_len);
  ~FrameTransform();
  FrameTransform(const FrameTransform&) = delete;
  FrameTransform& operator=(const FrameTransform&) = delete;

  /// Windowed power spectrum -> mel energies -> log(. + floor).
  void logmel(std::span<const double> frame, std::span<const double> window, const Matrix& filters,
              double floor, std::span<double> out);

 private:
  std::size_t fft_len_;
  double* in_;
  void* out_;
  void* plan_;
};

void check_logmel_args(std::span<const double> samples, std::size_t frame_len, std::size_t hop,
                       std::size_t fft_len, std::span<const double> window, const Matrix& filters);

}  // namespace birq::kernels::detail

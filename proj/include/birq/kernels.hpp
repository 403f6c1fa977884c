#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "birq/matrix.hpp"

// Dense numeric kernels. Two implementations share one contract:
//   birq::kernels::serial   single-threaded reference loops
//   birq::kernels           OpenMP row-parallel versions
// Each output element is accumulated in the same order in both, so the
// parallel results are bitwise equal to the serial reference for any thread
// count. tests/test_kernels.cpp holds them to that.

namespace birq::kernels {

/// C = A * B         (m x k) * (k x n)
Matrix matmul(const Matrix& a, const Matrix& b);
/// C = A * B^T       (m x k) * (n x k)^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// C = A^T * B       (k x m)^T * (k x n)
Matrix matmul_tn(const Matrix& a, const Matrix& b);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& x);
/// Row-wise log-softmax with max subtraction.
Matrix log_softmax_rows(const Matrix& x);

/// D(t, n) = |u_t|^2 - 2 u_t . c_n + |c_n|^2 with the codebook norms supplied.
Matrix sq_distances(const Matrix& u, const Matrix& codebook, std::span<const double> code_norms);

/// Index of the smallest entry per row; ties go to the smallest index.
std::vector<std::uint32_t> argmin_rows(const Matrix& d);
/// Index of the largest entry per row; ties go to the smallest index.
std::vector<std::uint32_t> argmax_rows(const Matrix& x);

/// Power spectra of Hann-windowed frames of a signal, mel-weighted and log
/// floored. `filters` is (num_bins x num_mels), frames start every `hop`.
Matrix logmel_frames(std::span<const double> samples, std::size_t frame_len, std::size_t hop,
                     std::size_t fft_len, std::span<const double> window, const Matrix& filters,
                     double floor);

namespace serial {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& x);
Matrix log_softmax_rows(const Matrix& x);
Matrix sq_distances(const Matrix& u, const Matrix& codebook, std::span<const double> code_norms);
std::vector<std::uint32_t> argmin_rows(const Matrix& d);
std::vector<std::uint32_t> argmax_rows(const Matrix& x);
Matrix logmel_frames(std::span<const double> samples, std::size_t frame_len, std::size_t hop,
                     std::size_t fft_len, std::span<const double> window, const Matrix& filters,
                     double floor);
}  // namespace serial

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads() noexcept;

}  // namespace birq::kernels

#include "birq/kernels.hpp"
#include "kernels_detail.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <memory>

namespace birq::kernels {
namespace {
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

inline long as_long(std::size_t n) { return static_cast<long>(n); }
}  // namespace

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  const std::size_t m = a.rows(), kk = a.cols(), n = b.cols();
  Matrix c(m, n);
  const bool par = m * kk * n >= kParallelWork;
  // i-k-j order: each c(i, j) still accumulates k in ascending order.
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < as_long(m); ++i) {
    double* ci = c.data() + static_cast<std::size_t>(i) * n;
    for (std::size_t k = 0; k < kk; ++k) {
      const double aik = a(static_cast<std::size_t>(i), k);
      const double* bk = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  const std::size_t m = a.rows(), kk = a.cols(), n = b.rows();
  Matrix c(m, n);
  const bool par = m * kk * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < as_long(m); ++i) {
    const double* ai = a.data() + static_cast<std::size_t>(i) * kk;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.data() + j * kk;
      double s = 0.0;
      for (std::size_t k = 0; k < kk; ++k) s += ai[k] * bj[k];
      c(static_cast<std::size_t>(i), j) = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: inner dimensions differ");
  const std::size_t m = a.cols(), kk = a.rows(), n = b.cols();
  Matrix c(m, n);
  const bool par = m * kk * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < as_long(m); ++i) {
    double* ci = c.data() + static_cast<std::size_t>(i) * n;
    for (std::size_t k = 0; k < kk; ++k) {
      const double aki = a(k, static_cast<std::size_t>(i));
      const double* bk = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  const bool par = x.size() >= kParallelWork / 8;
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < as_long(x.rows()); ++i) {
    detail::softmax_row(x.row(static_cast<std::size_t>(i)), y.row(static_cast<std::size_t>(i)));
  }
  return y;
}

Matrix log_softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  const bool par = x.size() >= kParallelWork / 8;
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < as_long(x.rows()); ++i) {
    detail::log_softmax_row(x.row(static_cast<std::size_t>(i)),
                            y.row(static_cast<std::size_t>(i)));
  }
  return y;
}

Matrix sq_distances(const Matrix& u, const Matrix& codebook, std::span<const double> code_norms) {
  if (u.cols() != codebook.cols()) throw ShapeError("sq_distances: code dimension mismatch");
  Matrix d(u.rows(), codebook.rows());
  const bool par = u.rows() * codebook.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long t = 0; t < as_long(u.rows()); ++t) {
    const auto r = static_cast<std::size_t>(t);
    detail::sq_distance_row(u.row(r), codebook, code_norms, d.row(r));
  }
  return d;
}

std::vector<std::uint32_t> argmin_rows(const Matrix& d) {
  std::vector<std::uint32_t> out(d.rows());
  const bool par = d.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long t = 0; t < as_long(d.rows()); ++t) {
    out[static_cast<std::size_t>(t)] = detail::argmin_row(d.row(static_cast<std::size_t>(t)));
  }
  return out;
}

std::vector<std::uint32_t> argmax_rows(const Matrix& x) {
  std::vector<std::uint32_t> out(x.rows());
  const bool par = x.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long t = 0; t < as_long(x.rows()); ++t) {
    out[static_cast<std::size_t>(t)] = detail::argmax_row(x.row(static_cast<std::size_t>(t)));
  }
  return out;
}

Matrix logmel_frames(std::span<const double> samples, std::size_t frame_len, std::size_t hop,
                     std::size_t fft_len, std::span<const double> window, const Matrix& filters,
                     double floor) {
  detail::check_logmel_args(samples, frame_len, hop, fft_len, window, filters);
  const std::size_t frames = 1 + (samples.size() - frame_len) / hop;
  Matrix out(frames, filters.cols());
#pragma omp parallel if (frames >= 16)
  {
    detail::FrameTransform xf(fft_len);
#pragma omp for schedule(static)
    for (long t = 0; t < as_long(frames); ++t) {
      const auto r = static_cast<std::size_t>(t);
      xf.logmel(samples.subspan(r * hop, frame_len), window, filters, floor, out.row(r));
    }
  }
  return out;
}

}  // namespace birq::kernels

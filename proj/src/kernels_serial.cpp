#include "birq/kernels.hpp"
#include "kernels_detail.hpp"

namespace birq::kernels::serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: inner dimensions differ");
  Matrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) detail::softmax_row(x.row(i), y.row(i));
  return y;
}

Matrix log_softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) detail::log_softmax_row(x.row(i), y.row(i));
  return y;
}

Matrix sq_distances(const Matrix& u, const Matrix& codebook, std::span<const double> code_norms) {
  if (u.cols() != codebook.cols()) throw ShapeError("sq_distances: code dimension mismatch");
  Matrix d(u.rows(), codebook.rows());
  for (std::size_t t = 0; t < u.rows(); ++t) {
    detail::sq_distance_row(u.row(t), codebook, code_norms, d.row(t));
  }
  return d;
}

std::vector<std::uint32_t> argmin_rows(const Matrix& d) {
  std::vector<std::uint32_t> out(d.rows());
  for (std::size_t t = 0; t < d.rows(); ++t) out[t] = detail::argmin_row(d.row(t));
  return out;
}

std::vector<std::uint32_t> argmax_rows(const Matrix& x) {
  std::vector<std::uint32_t> out(x.rows());
  for (std::size_t t = 0; t < x.rows(); ++t) out[t] = detail::argmax_row(x.row(t));
  return out;
}

Matrix logmel_frames(std::span<const double> samples, std::size_t frame_len, std::size_t hop,
                     std::size_t fft_len, std::span<const double> window, const Matrix& filters,
                     double floor) {
  detail::check_logmel_args(samples, frame_len, hop, fft_len, window, filters);
  const std::size_t frames = 1 + (samples.size() - frame_len) / hop;
  Matrix out(frames, filters.cols());
  detail::FrameTransform xf(fft_len);
  for (std::size_t t = 0; t < frames; ++t) {
    xf.logmel(samples.subspan(t * hop, frame_len), window, filters, floor, out.row(t));
  }
  return out;
}

}  // namespace birq::kernels::serial

#include "birq/matrix.hpp"

#include <cmath>

namespace birq {

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  }
  return t;
}

Matrix head_rows(const Matrix& m, std::size_t n) {
  if (n > m.rows()) throw ShapeError("head_rows: not enough rows");
  std::vector<double> data(m.data(), m.data() + n * m.cols());
  return Matrix(n, m.cols(), std::move(data));
}

bool all_finite(const Matrix& m) noexcept {
  for (double v : m.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace birq

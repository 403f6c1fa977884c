#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "birq/autodiff.hpp"
#include "birq/matrix.hpp"

namespace birq::test {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.values()) v = n(eng);
  return m;
}

// Central differences, written out here so the oracle shares nothing with
// the library's verify module.
inline Matrix numeric_grad(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_rel_error(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::max({std::abs(a.data()[i]), std::abs(b.data()[i]), 1e-8});
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / d);
  }
  return worst;
}

}  // namespace birq::test

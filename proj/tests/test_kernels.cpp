#include <doctest.h>

#include <cmath>
#include <numbers>

#include "birq/features.hpp"
#include "birq/kernels.hpp"
#include "helpers.hpp"

using namespace birq;
namespace k = birq::kernels;

namespace {

Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += static_cast<long double>(a(i, p)) * b(p, j);
      c(i, j) = static_cast<double>(s);
    }
  }
  return c;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("matmul variants agree with a naive product") {
    const Matrix a = test::random_matrix(7, 5, 1), b = test::random_matrix(5, 9, 2);
    CHECK(max_abs_diff(k::matmul(a, b), naive_product(a, b)) < 1e-12);
    CHECK(max_abs_diff(k::matmul_nt(a, transpose(b)), naive_product(a, b)) < 1e-12);
    CHECK(max_abs_diff(k::matmul_tn(transpose(a), b), naive_product(a, b)) < 1e-12);
    CHECK_THROWS_AS((void)k::matmul(a, a), ShapeError);
  }

  TEST_CASE("parallel kernels are bitwise equal to the serial reference") {
    // Large enough to cross the OpenMP work threshold.
    const Matrix a = test::random_matrix(97, 131, 3), b = test::random_matrix(131, 67, 4);
    CHECK(k::matmul(a, b) == k::serial::matmul(a, b));
    const Matrix bt = transpose(b);
    CHECK(k::matmul_nt(a, bt) == k::serial::matmul_nt(a, bt));
    const Matrix at = transpose(a);
    CHECK(k::matmul_tn(at, b) == k::serial::matmul_tn(at, b));

    const Matrix x = test::random_matrix(400, 33, 5, 4.0);
    CHECK(k::softmax_rows(x) == k::serial::softmax_rows(x));
    CHECK(k::log_softmax_rows(x) == k::serial::log_softmax_rows(x));
    CHECK(k::argmax_rows(x) == k::serial::argmax_rows(x));
    CHECK(k::argmin_rows(x) == k::serial::argmin_rows(x));

    const Matrix u = test::random_matrix(300, 8, 6), c = test::random_matrix(16, 8, 7);
    std::vector<double> norms(c.rows());
    for (std::size_t i = 0; i < c.rows(); ++i) {
      for (double v : c.row(i)) norms[i] += v * v;
    }
    CHECK(k::sq_distances(u, c, norms) == k::serial::sq_distances(u, c, norms));

    std::vector<double> wave(8000);
    for (std::size_t i = 0; i < wave.size(); ++i) wave[i] = std::sin(0.01 * static_cast<double>(i * i % 977));
    namespace f = features;
    CHECK(k::logmel_frames(wave, f::kWindowSamples, f::kHopSamples, f::kFftSize, f::hann_window(),
                           f::mel_filterbank(), f::kLogFloor) ==
          k::serial::logmel_frames(wave, f::kWindowSamples, f::kHopSamples, f::kFftSize, f::hann_window(),
                                   f::mel_filterbank(), f::kLogFloor));
  }

  TEST_CASE("softmax rows are normalized and shift invariant") {
    Matrix x = test::random_matrix(5, 6, 8, 10.0);
    const Matrix s = k::softmax_rows(x);
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double total = 0;
      for (double v : s.row(i)) total += v;
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (double& v : x.values()) v += 1000.0;
    CHECK(max_abs_diff(k::softmax_rows(x), s) < 1e-12);
    const Matrix ls = k::log_softmax_rows(x);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::exp(ls.data()[i]) == doctest::Approx(s.data()[i]));
  }

  TEST_CASE("argmin and argmax break ties toward the smaller index") {
    const Matrix d{{3, 1, 1, 2}, {0, 0, 0, 0}, {5, 4, 5, 4}};
    CHECK(k::argmin_rows(d) == std::vector<std::uint32_t>{1, 0, 1});
    CHECK(k::argmax_rows(d) == std::vector<std::uint32_t>{0, 0, 0});
  }

  TEST_CASE("logmel of one frame matches a direct DFT") {
    namespace f = features;
    std::vector<double> wave(f::kWindowSamples);
    for (std::size_t i = 0; i < wave.size(); ++i) {
      wave[i] = std::cos(2 * std::numbers::pi * 440.0 * static_cast<double>(i) / 16000.0) + 0.1 * std::sin(0.3 * i);
    }
    const Matrix out = k::logmel_frames(wave, f::kWindowSamples, f::kHopSamples, f::kFftSize, f::hann_window(),
                                        f::mel_filterbank(), f::kLogFloor);
    REQUIRE(out.rows() == 1);
    const auto& w = f::hann_window();
    const std::size_t bins = f::kFftSize / 2 + 1;
    std::vector<double> power(bins);
    for (std::size_t b = 0; b < bins; ++b) {
      double re = 0, im = 0;
      for (std::size_t n = 0; n < wave.size(); ++n) {
        const double ang = -2 * std::numbers::pi * static_cast<double>(b * n) / f::kFftSize;
        re += wave[n] * w[n] * std::cos(ang);
        im += wave[n] * w[n] * std::sin(ang);
      }
      power[b] = re * re + im * im;
    }
    const Matrix& fb = f::mel_filterbank();
    for (std::size_t m = 0; m < f::kNumMels; ++m) {
      double e = 0;
      for (std::size_t b = 0; b < bins; ++b) e += power[b] * fb(b, m);
      CHECK(out(0, m) == doctest::Approx(std::log(e + f::kLogFloor)).epsilon(1e-9));
    }
  }

  TEST_CASE("logmel argument checks") {
    namespace f = features;
    std::vector<double> short_wave(100, 0.0);
    CHECK_THROWS_AS((void)k::logmel_frames(short_wave, f::kWindowSamples, f::kHopSamples, f::kFftSize,
                                           f::hann_window(), f::mel_filterbank(), f::kLogFloor),
                    LengthError);
  }
}

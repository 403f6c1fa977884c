#include "kernels_detail.hpp"

#include <fftw3.h>

#include <mutex>

namespace birq::kernels::detail {
namespace {
// The FFTW planner is not reentrant; execution on distinct buffers is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

FrameTransform::FrameTransform(std::size_t fft_len) : fft_len_(fft_len) {
  std::lock_guard lock(planner_mutex());
  in_ = fftw_alloc_real(fft_len);
  auto* out = fftw_alloc_complex(fft_len / 2 + 1);
  out_ = out;
  plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(fft_len), in_, out, FFTW_ESTIMATE);
}

FrameTransform::~FrameTransform() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(plan_));
  fftw_free(in_);
  fftw_free(out_);
}

void FrameTransform::logmel(std::span<const double> frame, std::span<const double> window,
                            const Matrix& filters, double floor, std::span<double> out) {
  std::fill(in_, in_ + fft_len_, 0.0);
  for (std::size_t i = 0; i < frame.size(); ++i) in_[i] = frame[i] * window[i];
  fftw_execute(static_cast<fftw_plan>(plan_));
  const auto* spec = static_cast<const fftw_complex*>(out_);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < filters.rows(); ++k) {
    const double power = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    auto w = filters.row(k);
    for (std::size_t m = 0; m < out.size(); ++m) out[m] += w[m] * power;
  }
  for (double& v : out) v = std::log(v + floor);
}

void check_logmel_args(std::span<const double> samples, std::size_t frame_len, std::size_t hop,
                       std::size_t fft_len, std::span<const double> window, const Matrix& filters) {
  if (frame_len == 0 || hop == 0 || fft_len < frame_len) {
    throw ParameterError("logmel_frames: bad frame/hop/fft lengths");
  }
  if (window.size() != frame_len) throw ShapeError("logmel_frames: window length != frame length");
  if (filters.rows() != fft_len / 2 + 1) {
    throw ShapeError("logmel_frames: filterbank rows must equal fft_len/2+1");
  }
  if (samples.size() < frame_len) throw LengthError("logmel_frames: signal shorter than one frame");
}

}  // namespace birq::kernels::detail

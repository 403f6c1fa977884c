#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "birq/autodiff.hpp"
#include "birq/encoder.hpp"
#include "birq/objectives.hpp"
#include "birq/quantizer.hpp"

// Independent checks on the training stack. Nothing in here is used by the
// trainer; the toy-bilevel oracle and the straight-line loss reference share
// no arithmetic with the main modules.

namespace birq::verify {

// ---- finite differences -----------------------------------------------------

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
[[nodiscard]] std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x, double step);

/// |a - b| / max(|a|, |b|, 1e-8)
[[nodiscard]] double relative_error(double a, double b) noexcept;

[[nodiscard]] std::vector<double> flatten(const encoder::EncoderParams& p);
void unflatten(std::span<const double> flat, encoder::EncoderParams& p);

// ---- gradient check of the training objective -------------------------------

struct GradCheckConfig {
  std::size_t layers = 2;
  std::size_t input_dim = 6;
  std::size_t hidden_dim = 8;
  std::size_t heads = 2;
  std::size_t ff_dim = 16;
  std::size_t codebook_size = 4;
  std::size_t code_dim = 4;
  std::size_t frames = 6;
  std::size_t batch = 2;
  double tau = quantizer::kDefaultTemperature;
  objectives::PenaltyWeights weights;
  bool stop_label_grad = false;
  ad::Precision precision = ad::Precision::f64;
  double step = 1e-5;
  std::uint64_t seed = 7;
  /// Negative control: scale the analytic gradient of this tensor by 1.5.
  std::optional<std::string> sabotage;
};

struct TensorError {
  std::string tensor;
  double max_rel_error = 0.0;
};

struct ObjectiveReport {
  std::string objective;  // "F", "G" or "combined"
  std::vector<TensorError> tensors;
  double global_max = 0.0;
  std::string worst_tensor;
};

struct GradCheckReport {
  std::vector<ObjectiveReport> objectives;
  double global_max = 0.0;
  std::string worst;  // "objective:tensor"
  double step = 0.0;
  ad::Precision precision = ad::Precision::f64;
  std::size_t parameter_count = 0;
};

/// Default acceptance threshold for a given precision.
[[nodiscard]] double gradcheck_threshold(ad::Precision p) noexcept;

/// The seeded tiny instance the gradient check runs on.
struct TinyInstance {
  encoder::EncoderParams params;
  quantizer::QuantizerState quant;
  std::vector<objectives::Example> batch;
  objectives::LossOptions options;
};
[[nodiscard]] TinyInstance make_tiny_instance(const GradCheckConfig& cfg);

[[nodiscard]] GradCheckReport gradcheck_birq(const GradCheckConfig& cfg);

// ---- bilevel toy problem ----------------------------------------------------

/// Quadratic q(x) = x^T A x - 2 b^T x.
struct Quadratic {
  Matrix A;
  std::vector<double> b;
};

struct ToyBilevelProblem {
  Quadratic upper;  // F
  Quadratic lower;  // G
  double delta = 1.0;
  [[nodiscard]] std::size_t dim() const noexcept { return upper.b.size(); }
};

/// d = 2, F = |x|^2 - 4 x_0, G = |x|^2, delta = 1; constrained optimum (1, 0).
[[nodiscard]] ToyBilevelProblem hand_kkt_fixture();

[[nodiscard]] double evaluate(const Quadratic& q, std::span<const double> x);
[[nodiscard]] double lower_minimum(const ToyBilevelProblem& p);

/// argmin F over {G - min G <= delta}, via KKT multiplier bisection.
[[nodiscard]] std::vector<double> solve_toy_oracle(const ToyBilevelProblem& p);

struct PenaltyPoint {
  double gamma = 0.0;
  double w1 = 0.0;
  double w2 = 0.0;
  std::vector<double> theta_penalty;
  double delta_measured = 0.0;  // G(theta_pen) - min G
  std::vector<double> theta_oracle;
  double distance = 0.0;
  double upper_value = 0.0;
};

struct BilevelReport {
  std::vector<PenaltyPoint> points;
};

inline constexpr double kInfiniteGamma = std::numeric_limits<double>::infinity();

/// Gradient descent on w1 F + w2 G with w1 = 1/(1+gamma), w2 = gamma/(1+gamma)
/// (gamma = inf gives w1 = 0). Each point is compared with the oracle solution
/// at its own measured lower-level gap.
[[nodiscard]] BilevelReport run_penalty_demo(const ToyBilevelProblem& p, std::span<const double> gammas,
                                             double step_size, std::size_t steps);

// ---- dual implementation ----------------------------------------------------

struct DualCheck {
  double lower_module = 0.0;
  double lower_reference = 0.0;
  double upper_module = 0.0;
  double upper_reference = 0.0;
  [[nodiscard]] double max_deviation() const noexcept;
};

/// Recomputes G and F for `inst` with a straight-line implementation that
/// uses fixed-size stack buffers, and compares with the objectives module.
[[nodiscard]] DualCheck dual_impl_loss_check(const TinyInstance& inst);

/// Reference masked CE for one sequence (straight-line, no allocation).
/// `labels` is T x N row-major; `masked` lists masked frames.
[[nodiscard]] double reference_masked_ce(std::span<const double> logits, std::span<const double> labels,
                                         std::size_t frames, std::size_t n, std::span<const std::size_t> masked);

}  // namespace birq::verify

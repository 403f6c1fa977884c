#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "birq/autodiff.hpp"
#include "birq/encoder.hpp"
#include "birq/masking.hpp"
#include "birq/quantizer.hpp"

// Masked cross-entropy and the two-level objective. Per sequence:
//   anchoring labels  y      = hard NN labels of the projected clean input
//   enhanced labels   y^(k)  = Gumbel-softmax labels of the projected layer-k tap
//                              of the clean input (differentiable in theta)
//   predictions              = logits of the masked input
// G is the masked CE against y, F against y^(k); the trained objective is
// w1 F + w2 G. Batch values are means of per-sequence sums.

namespace birq::objectives {

struct PenaltyWeights {
  double w1 = 0.1;
  double w2 = 2.4;
  /// w2 / w1; infinite when w1 == 0.
  [[nodiscard]] double gamma() const noexcept;
};

void validate(const PenaltyWeights& w);

struct LossBreakdown {
  double F_value = 0.0;
  double G_value = 0.0;
  double combined = 0.0;
  std::size_t masked_count = 0;
  double mask_acc_anchor = 0.0;
  double mask_acc_enhanced = 0.0;
};

[[nodiscard]] double masked_ce(const Matrix& logits, const quantizer::SoftLabels& labels,
                               const masking::MaskSpec& mask);
[[nodiscard]] double masked_ce(const Matrix& logits, const quantizer::HardLabels& labels,
                               const masking::MaskSpec& mask);

/// One sequence prepared for a training step.
struct Example {
  Matrix clean;   // normalized stacked input, T x d_in
  Matrix masked;  // clean with masked rows replaced by noise
  masking::MaskSpec mask;
  std::vector<quantizer::HardLabels> anchors;  // one per codebook
  std::vector<quantizer::GumbelNoise> noise;   // one per codebook, or empty for v = 0
};

[[nodiscard]] quantizer::HardLabels anchor_labels(const quantizer::QuantizerSet& q, const Matrix& clean);

struct LossOptions {
  PenaltyWeights weights;
  double tau = quantizer::kDefaultTemperature;
  std::size_t tap_layer = 1;
  bool stop_label_grad = false;
  /// Test hook: the masked-input forward sees parameters as constants, so
  /// gradients reach theta only through the enhanced-label path.
  bool stop_prediction_grad = false;
};

enum class Objective { combined, upper, lower };

struct Evaluation {
  LossBreakdown breakdown;
  /// d(objective)/d(tensor), one per encoder tensor; empty unless requested.
  std::vector<Matrix> gradient;
  // Codebook-0 diagnostics over every masked frame of the batch.
  std::vector<std::uint32_t> anchor_masked;
  std::vector<std::uint32_t> enhanced_masked;
  std::vector<std::uint32_t> predicted_masked;
  /// Enhanced argmax over every frame of the batch.
  std::vector<std::uint32_t> enhanced_all;
};

/// Evaluates the batch and optionally the gradient of `which`. Sequences are
/// processed in parallel, and gradients are reduced in sequence order.
[[nodiscard]] Evaluation evaluate(const encoder::EncoderParams& params,
                                  const quantizer::QuantizerState& quant,
                                  std::span<const Example> batch, const LossOptions& opts,
                                  Objective which, bool with_gradient,
                                  ad::Precision precision = ad::Precision::f64);

[[nodiscard]] double lower_loss(const encoder::EncoderParams& params,
                                const quantizer::QuantizerState& quant,
                                std::span<const Example> batch, const LossOptions& opts);
[[nodiscard]] double upper_loss(const encoder::EncoderParams& params,
                                const quantizer::QuantizerState& quant,
                                std::span<const Example> batch, const LossOptions& opts);
[[nodiscard]] LossBreakdown combined_loss(const encoder::EncoderParams& params,
                                          const quantizer::QuantizerState& quant,
                                          std::span<const Example> batch, const LossOptions& opts);

}  // namespace birq::objectives

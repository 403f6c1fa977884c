#include "birq/objectives.hpp"

#include <cmath>
#include <limits>

#include "birq/kernels.hpp"

namespace birq::objectives {

double PenaltyWeights::gamma() const noexcept {
  return w1 > 0.0 ? w2 / w1 : std::numeric_limits<double>::infinity();
}

void validate(const PenaltyWeights& w) {
  if (!(w.w1 >= 0.0) || !(w.w2 >= 0.0) || !std::isfinite(w.w1) || !std::isfinite(w.w2)) {
    throw ConfigError("penalty weights must be finite and >= 0");
  }
  if (!(w.w1 + w.w2 > 0.0)) throw ConfigError("penalty weights: w1 + w2 must be > 0");
}

double masked_ce(const Matrix& logits, const quantizer::SoftLabels& labels,
                 const masking::MaskSpec& mask) {
  ad::Tape tape;
  return ad::masked_cross_entropy(tape.constant(logits), tape.constant(labels.rows), mask.masked)
      .value()(0, 0);
}

double masked_ce(const Matrix& logits, const quantizer::HardLabels& labels,
                 const masking::MaskSpec& mask) {
  ad::Tape tape;
  return ad::masked_cross_entropy(tape.constant(logits), labels.indices, mask.masked).value()(0, 0);
}

quantizer::HardLabels anchor_labels(const quantizer::QuantizerSet& q, const Matrix& clean) {
  return quantizer::assign_hard(quantizer::project(q.anchor, clean), q.codebook);
}

namespace {

struct SequenceResult {
  double F = 0.0;
  double G = 0.0;
  std::vector<Matrix> gradient;
  std::vector<std::uint32_t> anchor_masked, enhanced_masked, predicted_masked, enhanced_all;
};

SequenceResult run_sequence(const encoder::EncoderParams& params,
                            const quantizer::QuantizerState& quant, const Example& ex,
                            const LossOptions& opts, Objective which, bool with_gradient,
                            double batch_scale, ad::Precision precision) {
  const auto& cfg = params.config;
  const std::size_t L = quant.sets.size();
  const std::size_t N = quant.codebook_size();
  if (cfg.logits != N * L) throw ShapeError("objectives: logit width must equal N * num_codebooks");
  if (ex.anchors.size() != L) throw ShapeError("objectives: one anchor label set per codebook");
  if (!ex.noise.empty() && ex.noise.size() != L) throw ShapeError("objectives: one noise draw per codebook");
  if (!ex.clean.same_shape(ex.masked)) throw ShapeError("objectives: clean/masked shapes differ");

  ad::Tape tape(precision);
  auto theta = encoder::bind(tape, params, with_gradient);
  auto frozen = opts.stop_prediction_grad ? encoder::bind(tape, params, false) : theta;

  // Prediction path: masked input through all K layers.
  encoder::Graph pred = encoder::forward(cfg, frozen, tape.constant(ex.masked), cfg.layers);
  // Label path: clean input through layers 1..k.
  encoder::Graph lab = encoder::forward(cfg, theta, tape.constant(ex.clean), opts.tap_layer);
  ad::Var z = encoder::tap(lab, opts.tap_layer);

  SequenceResult r;
  std::vector<ad::Var> f_terms, g_terms;
  const double inv_l = 1.0 / static_cast<double>(L);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& q = quant.sets[l];
    ad::Var logits = L == 1 ? pred.logits : ad::slice_cols(pred.logits, l * N, N);
    ad::Var u = quantizer::project(q.enhance, z);
    ad::Var soft = quantizer::assign_soft(u, q.codebook, opts.tau, ex.noise.empty() ? nullptr : &ex.noise[l]);
    if (opts.stop_label_grad) soft = ad::stop_gradient(soft);
    f_terms.push_back(ad::masked_cross_entropy(logits, soft, ex.mask.masked));
    g_terms.push_back(ad::masked_cross_entropy(logits, ex.anchors[l].indices, ex.mask.masked));
    if (l == 0) {
      const auto pred_idx = kernels::argmax_rows(logits.value());
      const auto enh_idx = kernels::argmax_rows(soft.value());
      for (std::size_t t : ex.mask.masked) {
        r.anchor_masked.push_back(ex.anchors[0].indices[t]);
        r.enhanced_masked.push_back(enh_idx[t]);
        r.predicted_masked.push_back(pred_idx[t]);
      }
      r.enhanced_all = enh_idx;
    }
  }
  auto mean_of = [&](std::vector<ad::Var>& terms) {
    ad::Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return L == 1 ? acc : ad::scale(acc, inv_l);
  };
  ad::Var F = mean_of(f_terms);
  ad::Var G = mean_of(g_terms);
  r.F = F.value()(0, 0);
  r.G = G.value()(0, 0);

  if (with_gradient) {
    ad::Var objective;
    switch (which) {
      case Objective::upper: objective = F; break;
      case Objective::lower: objective = G; break;
      case Objective::combined:
        objective = ad::add(ad::scale(F, opts.weights.w1), ad::scale(G, opts.weights.w2));
        break;
    }
    tape.backward(ad::scale(objective, batch_scale));
    r.gradient.reserve(theta.size());
    for (const auto& v : theta) r.gradient.push_back(tape.grad(v));
  }
  return r;
}

}  // namespace

Evaluation evaluate(const encoder::EncoderParams& params, const quantizer::QuantizerState& quant,
                    std::span<const Example> batch, const LossOptions& opts, Objective which,
                    bool with_gradient, ad::Precision precision) {
  if (batch.empty()) throw ContractError("objectives: empty batch");
  validate(opts.weights);
  if (opts.tap_layer < 1 || opts.tap_layer > params.config.layers) {
    throw ParameterError("objectives: tap layer must be in [1, K]");
  }
  for (const auto& ex : batch) {
    if (ex.mask.masked.empty()) throw ContractError("objectives: empty mask");
  }

  const double batch_scale = 1.0 / static_cast<double>(batch.size());
  std::vector<SequenceResult> results(batch.size());
  // Per-sequence tapes are independent; any worker count gives the same bits.
#pragma omp parallel for schedule(static) if (batch.size() > 1)
  for (long i = 0; i < static_cast<long>(batch.size()); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    results[idx] = run_sequence(params, quant, batch[idx], opts, which, with_gradient, batch_scale, precision);
  }

  Evaluation ev;
  double fsum = 0.0, gsum = 0.0;
  for (auto& r : results) {
    fsum += r.F;
    gsum += r.G;
    ev.anchor_masked.insert(ev.anchor_masked.end(), r.anchor_masked.begin(), r.anchor_masked.end());
    ev.enhanced_masked.insert(ev.enhanced_masked.end(), r.enhanced_masked.begin(), r.enhanced_masked.end());
    ev.predicted_masked.insert(ev.predicted_masked.end(), r.predicted_masked.begin(), r.predicted_masked.end());
    ev.enhanced_all.insert(ev.enhanced_all.end(), r.enhanced_all.begin(), r.enhanced_all.end());
    if (with_gradient) {
      if (ev.gradient.empty()) {
        ev.gradient = std::move(r.gradient);
      } else {
        for (std::size_t k = 0; k < ev.gradient.size(); ++k) {
          auto& acc = ev.gradient[k];
          const auto& g = r.gradient[k];
          for (std::size_t j = 0; j < acc.size(); ++j) acc.data()[j] += g.data()[j];
        }
      }
    }
  }

  auto& b = ev.breakdown;
  b.F_value = fsum * batch_scale;
  b.G_value = gsum * batch_scale;
  b.combined = opts.weights.w1 * b.F_value + opts.weights.w2 * b.G_value;
  b.masked_count = ev.predicted_masked.size();
  std::size_t hit_anchor = 0, hit_enh = 0;
  for (std::size_t i = 0; i < b.masked_count; ++i) {
    hit_anchor += ev.predicted_masked[i] == ev.anchor_masked[i];
    hit_enh += ev.predicted_masked[i] == ev.enhanced_masked[i];
  }
  b.mask_acc_anchor = static_cast<double>(hit_anchor) / static_cast<double>(b.masked_count);
  b.mask_acc_enhanced = static_cast<double>(hit_enh) / static_cast<double>(b.masked_count);
  return ev;
}

double lower_loss(const encoder::EncoderParams& params, const quantizer::QuantizerState& quant,
                  std::span<const Example> batch, const LossOptions& opts) {
  return evaluate(params, quant, batch, opts, Objective::lower, false).breakdown.G_value;
}

double upper_loss(const encoder::EncoderParams& params, const quantizer::QuantizerState& quant,
                  std::span<const Example> batch, const LossOptions& opts) {
  return evaluate(params, quant, batch, opts, Objective::upper, false).breakdown.F_value;
}

LossBreakdown combined_loss(const encoder::EncoderParams& params, const quantizer::QuantizerState& quant,
                            std::span<const Example> batch, const LossOptions& opts) {
  return evaluate(params, quant, batch, opts, Objective::combined, false).breakdown;
}

}  // namespace birq::objectives

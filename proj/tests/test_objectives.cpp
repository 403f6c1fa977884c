#include <doctest.h>

#include <cmath>
#include <numeric>

#include "birq/objectives.hpp"
#include "birq/verify.hpp"
#include "helpers.hpp"

using namespace birq;
using namespace birq::objectives;

namespace {

// log-sum-exp per row, written directly.
std::vector<double> log_softmax_row(const Matrix& l, std::size_t t) {
  double mx = l(t, 0);
  for (std::size_t n = 1; n < l.cols(); ++n) mx = std::max(mx, l(t, n));
  double s = 0.0;
  for (std::size_t n = 0; n < l.cols(); ++n) s += std::exp(l(t, n) - mx);
  std::vector<double> out(l.cols());
  for (std::size_t n = 0; n < l.cols(); ++n) out[n] = l(t, n) - mx - std::log(s);
  return out;
}

verify::TinyInstance tiny(std::uint64_t seed = 7) {
  verify::GradCheckConfig c;
  c.seed = seed;
  return verify::make_tiny_instance(c);
}

double max_abs_diff(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t j = 0; j < a[k].size(); ++j) {
      worst = std::max(worst, std::abs(a[k].data()[j] - b[k].data()[j]));
    }
  }
  return worst;
}

double max_rel_diff(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, test::max_rel_error(a[k], b[k]));
  return worst;
}

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("uniform logits cost ln N per masked frame") {
    Matrix logits(5, 4);
    quantizer::HardLabels y{{0, 1, 2, 3, 0}};
    masking::MaskSpec m{{0, 2, 4}};
    CHECK(masked_ce(logits, y, m) == doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-14));
  }

  TEST_CASE("confident correct logits cost almost nothing") {
    Matrix logits(3, 4);
    quantizer::HardLabels y{{2, 0, 3}};
    for (std::size_t t = 0; t < 3; ++t) logits(t, y.indices[t]) = 50.0;
    masking::MaskSpec m{{0, 1, 2}};
    CHECK(masked_ce(logits, y, m) < 1e-6 * 3);
  }

  TEST_CASE("soft labels equal to the prediction give the summed entropy") {
    const Matrix logits = test::random_matrix(6, 5, 11);
    quantizer::SoftLabels y{Matrix(6, 5)};
    masking::MaskSpec m{{1, 3, 4}};
    double entropy = 0.0;
    for (std::size_t t = 0; t < 6; ++t) {
      const auto lp = log_softmax_row(logits, t);
      for (std::size_t n = 0; n < 5; ++n) y.rows(t, n) = std::exp(lp[n]);
      if (t == 1 || t == 3 || t == 4) {
        for (std::size_t n = 0; n < 5; ++n) entropy -= std::exp(lp[n]) * lp[n];
      }
    }
    CHECK(masked_ce(logits, y, m) == doctest::Approx(entropy).epsilon(1e-12));
  }

  TEST_CASE("cross-entropy never undercuts the label entropy") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Matrix logits = test::random_matrix(4, 6, 100 + s, 2.0);
      const Matrix raw = test::random_matrix(4, 6, 200 + s, 2.0);
      quantizer::SoftLabels y{Matrix(4, 6)};
      double entropy = 0.0;
      for (std::size_t t = 0; t < 4; ++t) {
        const auto lp = log_softmax_row(raw, t);
        for (std::size_t n = 0; n < 6; ++n) {
          y.rows(t, n) = std::exp(lp[n]);
          entropy -= std::exp(lp[n]) * lp[n];
        }
      }
      CHECK(masked_ce(logits, y, masking::MaskSpec{{0, 1, 2, 3}}) >= entropy - 1e-12);
    }
  }

  TEST_CASE("one-hot soft labels agree with hard labels") {
    const Matrix logits = test::random_matrix(5, 3, 3);
    quantizer::HardLabels h{{2, 1, 0, 0, 1}};
    quantizer::SoftLabels s{Matrix(5, 3)};
    for (std::size_t t = 0; t < 5; ++t) s.rows(t, h.indices[t]) = 1.0;
    masking::MaskSpec m{{0, 2, 3}};
    CHECK(masked_ce(logits, s, m) == doctest::Approx(masked_ce(logits, h, m)).epsilon(1e-14));
  }

  TEST_CASE("lower loss of one sequence is its masked CE against the anchors") {
    auto inst = tiny();
    std::span<const Example> one(inst.batch.data(), 1);
    const auto tr = encoder::forward(inst.params, inst.batch[0].masked);
    const double direct = masked_ce(tr.logits, inst.batch[0].anchors[0], inst.batch[0].mask);
    CHECK(lower_loss(inst.params, inst.quant, one, inst.options) == doctest::Approx(direct).epsilon(1e-12));
  }

  TEST_CASE("batch value is the mean of per-sequence sums") {
    auto inst = tiny();
    const auto& ex = inst.batch;
    const double a = lower_loss(inst.params, inst.quant, std::span<const Example>(&ex[0], 1), inst.options);
    const double b = lower_loss(inst.params, inst.quant, std::span<const Example>(&ex[1], 1), inst.options);
    CHECK(lower_loss(inst.params, inst.quant, ex, inst.options) == doctest::Approx((a + b) / 2).epsilon(1e-14));

    std::vector<Example> doubled{ex[0], ex[0]};
    CHECK(lower_loss(inst.params, inst.quant, doubled, inst.options) == doctest::Approx(a).epsilon(1e-14));

    std::vector<Example> swapped{ex[1], ex[0]};
    const auto x = combined_loss(inst.params, inst.quant, ex, inst.options);
    const auto y = combined_loss(inst.params, inst.quant, swapped, inst.options);
    CHECK(x.F_value == doctest::Approx(y.F_value).epsilon(1e-14));
    CHECK(x.G_value == doctest::Approx(y.G_value).epsilon(1e-14));
  }

  TEST_CASE("combined value is w1 F + w2 G") {
    auto inst = tiny();
    const auto b = combined_loss(inst.params, inst.quant, inst.batch, inst.options);
    const auto& w = inst.options.weights;
    CHECK(b.combined == doctest::Approx(w.w1 * b.F_value + w.w2 * b.G_value).epsilon(1e-15));
    CHECK(b.F_value == doctest::Approx(upper_loss(inst.params, inst.quant, inst.batch, inst.options)).epsilon(1e-15));
    CHECK(b.G_value == doctest::Approx(lower_loss(inst.params, inst.quant, inst.batch, inst.options)).epsilon(1e-15));
  }

  TEST_CASE("default weights give gamma 24") {
    PenaltyWeights w;
    CHECK(w.gamma() == doctest::Approx(24.0).epsilon(1e-12));
    PenaltyWeights z{0.0, 1.0};
    CHECK(std::isinf(z.gamma()));
    CHECK_THROWS_AS(validate(PenaltyWeights{-0.1, 1.0}), ConfigError);
    CHECK_THROWS_AS(validate(PenaltyWeights{0.0, 0.0}), ConfigError);
    CHECK_THROWS_AS(validate(PenaltyWeights{std::nan(""), 1.0}), ConfigError);
  }

  TEST_CASE("straight-line reference agrees with the module") {
    for (std::uint64_t s : {7u, 8u, 9u}) {
      const auto check = verify::dual_impl_loss_check(tiny(s));
      CHECK(check.max_deviation() <= 1e-9);
    }
  }

  TEST_CASE("huge temperature flattens the enhanced labels") {
    auto inst = tiny();
    inst.options.tau = 1e6;
    const double F = upper_loss(inst.params, inst.quant, inst.batch, inst.options);
    double oracle = 0.0;
    for (const auto& ex : inst.batch) {
      const auto tr = encoder::forward(inst.params, ex.masked);
      for (std::size_t t : ex.mask.masked) {
        const auto lp = log_softmax_row(tr.logits, t);
        oracle -= std::accumulate(lp.begin(), lp.end(), 0.0) / static_cast<double>(lp.size());
      }
    }
    oracle /= static_cast<double>(inst.batch.size());
    CHECK(F == doctest::Approx(oracle).epsilon(1e-4));
  }

  TEST_CASE("tap at the last layer is allowed and finite") {
    auto inst = tiny();
    inst.options.tap_layer = inst.params.config.layers;
    const auto ev = evaluate(inst.params, inst.quant, inst.batch, inst.options, Objective::combined, true);
    CHECK(std::isfinite(ev.breakdown.combined));
    for (const auto& g : ev.gradient) {
      for (double v : g.values()) CHECK(std::isfinite(v));
    }
    inst.options.tap_layer = 0;
    CHECK_THROWS_AS((void)combined_loss(inst.params, inst.quant, inst.batch, inst.options), ParameterError);
  }

  TEST_CASE("gradient is linear in the penalty weights") {
    auto inst = tiny();
    auto opts = inst.options;
    const auto gF = evaluate(inst.params, inst.quant, inst.batch, opts, Objective::upper, true).gradient;
    const auto gG = evaluate(inst.params, inst.quant, inst.batch, opts, Objective::lower, true).gradient;
    for (auto [w1, w2] : {std::pair{0.1, 2.4}, std::pair{1.0, 0.0}, std::pair{0.3, 0.7}}) {
      opts.weights = {w1, w2};
      const auto gc = evaluate(inst.params, inst.quant, inst.batch, opts, Objective::combined, true).gradient;
      std::vector<Matrix> expect;
      for (std::size_t k = 0; k < gF.size(); ++k) {
        Matrix e(gF[k].rows(), gF[k].cols());
        for (std::size_t j = 0; j < e.size(); ++j) e.data()[j] = w1 * gF[k].data()[j] + w2 * gG[k].data()[j];
        expect.push_back(std::move(e));
      }
      CHECK(max_abs_diff(gc, expect) <= 1e-9);
    }
  }

  TEST_CASE("w1 = 0 leaves only the scaled lower gradient") {
    auto inst = tiny();
    auto opts = inst.options;
    const auto gG = evaluate(inst.params, inst.quant, inst.batch, opts, Objective::lower, true).gradient;

    // Power-of-two weight: every rescaling is exact, so the bits must match.
    opts.weights = {0.0, 2.0};
    auto gc = evaluate(inst.params, inst.quant, inst.batch, opts, Objective::combined, true).gradient;
    bool identical = true;
    for (std::size_t k = 0; k < gG.size(); ++k) {
      for (std::size_t j = 0; j < gG[k].size(); ++j) identical &= gc[k].data()[j] == 2.0 * gG[k].data()[j];
    }
    CHECK(identical);

    opts.weights = {0.0, 2.4};
    gc = evaluate(inst.params, inst.quant, inst.batch, opts, Objective::combined, true).gradient;
    std::vector<Matrix> scaled = gG;
    for (auto& g : scaled) {
      for (double& v : g.values()) v *= 2.4;
    }
    CHECK(max_rel_diff(gc, scaled) <= 1e-12);
  }

  TEST_CASE("label path carries gradient to the tapped layers only") {
    auto inst = tiny();
    auto opts = inst.options;
    opts.stop_prediction_grad = true;
    const auto ev = evaluate(inst.params, inst.quant, inst.batch, opts, Objective::upper, true);
    const auto& cfg = inst.params.config;
    REQUIRE(opts.tap_layer < cfg.layers);

    // Tensors past the tap and the head never touch the label path.
    for (std::size_t s = 0; s < encoder::kSlotsPerLayer; ++s) {
      const auto& g = ev.gradient[encoder::layer_tensor(opts.tap_layer, static_cast<encoder::Slot>(s))];
      for (double v : g.values()) CHECK(v == 0.0);
    }
    for (double v : ev.gradient[encoder::head_weight_index(cfg)].values()) CHECK(v == 0.0);

    // Finite differences of F with predictions pinned at the current theta.
    std::vector<Matrix> pinned_logits;
    for (const auto& ex : inst.batch) pinned_logits.push_back(encoder::forward(inst.params, ex.masked).logits);
    auto label_only_F = [&](const encoder::EncoderParams& p) {
      double total = 0.0;
      for (std::size_t i = 0; i < inst.batch.size(); ++i) {
        const auto& ex = inst.batch[i];
        const auto tr = encoder::forward(p, ex.clean);
        const Matrix z = encoder::tap(tr, opts.tap_layer);
        const auto& q = inst.quant.sets[0];
        const auto soft = quantizer::assign_soft(quantizer::project(q.enhance, z), q.codebook, opts.tau,
                                                 ex.noise.empty() ? nullptr : &ex.noise[0]);
        total += masked_ce(pinned_logits[i], soft, ex.mask);
      }
      return total / static_cast<double>(inst.batch.size());
    };
    bool nonzero = false;
    for (std::size_t idx : {encoder::kInputWeight, encoder::layer_tensor(0, encoder::Slot::q_weight),
                            encoder::layer_tensor(0, encoder::Slot::ff1_weight)}) {
      const auto numeric = test::numeric_grad(
          [&](const Matrix& w) {
            auto p = inst.params;
            p.tensors[idx].value = w;
            return label_only_F(p);
          },
          inst.params.tensors[idx].value);
      CHECK(test::max_rel_error(ev.gradient[idx], numeric) <= 1e-4);
      for (double v : ev.gradient[idx].values()) nonzero |= std::abs(v) > 1e-8;
    }
    CHECK(nonzero);
  }

  TEST_CASE("stop_label_grad removes the label path") {
    auto inst = tiny();
    auto opts = inst.options;
    opts.stop_label_grad = true;
    opts.stop_prediction_grad = true;
    const auto ev = evaluate(inst.params, inst.quant, inst.batch, opts, Objective::upper, true);
    for (const auto& g : ev.gradient) {
      for (double v : g.values()) CHECK(v == 0.0);
    }
  }

  TEST_CASE("diagnostic label lists line up with the masked frames") {
    auto inst = tiny();
    const auto ev = evaluate(inst.params, inst.quant, inst.batch, inst.options, Objective::combined, false);
    std::size_t masked = 0, frames = 0;
    for (const auto& ex : inst.batch) {
      masked += ex.mask.masked.size();
      frames += ex.clean.rows();
    }
    CHECK(ev.breakdown.masked_count == masked);
    CHECK(ev.anchor_masked.size() == masked);
    CHECK(ev.enhanced_all.size() == frames);
    CHECK(ev.gradient.empty());
    CHECK(ev.breakdown.mask_acc_anchor >= 0.0);
    CHECK(ev.breakdown.mask_acc_anchor <= 1.0);
  }

  TEST_CASE("empty masks and batches are rejected") {
    auto inst = tiny();
    CHECK_THROWS_AS((void)combined_loss(inst.params, inst.quant, std::span<const Example>(), inst.options),
                    ContractError);
    inst.batch[0].mask.masked.clear();
    CHECK_THROWS_AS((void)combined_loss(inst.params, inst.quant, inst.batch, inst.options), ContractError);
  }
}

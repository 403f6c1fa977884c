#include <cmath>
#include <random>

#include "birq/masking.hpp"
#include "birq/rng.hpp"
#include "birq/verify.hpp"

namespace birq::verify {

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x, double step) {
  if (!(step > 0.0)) throw ParameterError("finite_diff_grad: step must be > 0");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    }
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double relative_error(double a, double b) noexcept {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

std::vector<double> flatten(const encoder::EncoderParams& p) {
  std::vector<double> flat;
  flat.reserve(p.scalar_count());
  for (const auto& t : p.tensors) flat.insert(flat.end(), t.value.values().begin(), t.value.values().end());
  return flat;
}

void unflatten(std::span<const double> flat, encoder::EncoderParams& p) {
  if (flat.size() != p.scalar_count()) throw ShapeError("unflatten: size mismatch");
  std::size_t off = 0;
  for (auto& t : p.tensors) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.value.size(), t.value.data());
    off += t.value.size();
  }
}

double gradcheck_threshold(ad::Precision p) noexcept { return p == ad::Precision::f32 ? 1e-2 : 1e-4; }

TinyInstance make_tiny_instance(const GradCheckConfig& cfg) {
  encoder::EncoderConfig ec;
  ec.layers = cfg.layers;
  ec.input_dim = cfg.input_dim;
  ec.hidden_dim = cfg.hidden_dim;
  ec.heads = cfg.heads;
  ec.ff_dim = cfg.ff_dim;
  ec.logits = cfg.codebook_size;
  ec.seed = cfg.seed;

  TinyInstance inst;
  inst.params = encoder::init_encoder(ec);
  // Move gains and biases off 1 and 0 so no gradient sits at a symmetric point.
  rng::Engine eng(rng::derive(cfg.seed, rng::Role::data, 1));
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto& t : inst.params.tensors) {
    if (t.value.rows() == 1) {
      for (double& v : t.value.values()) v += jitter(eng);
    }
  }

  quantizer::QuantizerShape qs;
  qs.input_dim = cfg.input_dim;
  qs.hidden_dim = cfg.hidden_dim;
  qs.codebook_size = cfg.codebook_size;
  qs.code_dim = cfg.code_dim;
  inst.quant = quantizer::make_quantizer(cfg.seed, qs);

  masking::MaskPolicy policy;
  policy.start_prob = 0.3;
  policy.span = 2;
  policy.stack_factor = 1;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < cfg.batch; ++i) {
    objectives::Example ex;
    ex.clean = Matrix(cfg.frames, cfg.input_dim);
    for (double& v : ex.clean.values()) v = normal(eng);
    ex.mask = masking::sample_mask(policy, cfg.frames, rng::derive(cfg.seed, rng::Role::mask, 0, 0, i));
    ex.masked = masking::apply_mask(ex.clean, ex.mask, policy, rng::derive(cfg.seed, rng::Role::noise_fill, 0, 0, i));
    ex.anchors.push_back(objectives::anchor_labels(inst.quant.sets[0], ex.clean));
    ex.noise.push_back(quantizer::sample_gumbel(rng::derive(cfg.seed, rng::Role::gumbel, 0, 0, i), cfg.frames,
                                                cfg.codebook_size));
    inst.batch.push_back(std::move(ex));
  }

  inst.options.weights = cfg.weights;
  inst.options.tau = cfg.tau;
  inst.options.tap_layer = encoder::default_k(cfg.layers);
  inst.options.stop_label_grad = cfg.stop_label_grad;
  return inst;
}

GradCheckReport gradcheck_birq(const GradCheckConfig& cfg) {
  TinyInstance inst = make_tiny_instance(cfg);
  if (inst.params.scalar_count() > 5000) throw ParameterError("gradcheck: configuration too large");

  GradCheckReport report;
  report.step = cfg.step;
  report.precision = cfg.precision;
  report.parameter_count = inst.params.scalar_count();

  const std::vector<double> theta = flatten(inst.params);
  encoder::EncoderParams probe = inst.params;

  struct Target {
    const char* name;
    objectives::Objective which;
    double (*pick)(const objectives::LossBreakdown&);
  };
  const Target targets[] = {
      {"F", objectives::Objective::upper, [](const objectives::LossBreakdown& b) { return b.F_value; }},
      {"G", objectives::Objective::lower, [](const objectives::LossBreakdown& b) { return b.G_value; }},
      {"combined", objectives::Objective::combined,
       [](const objectives::LossBreakdown& b) { return b.combined; }},
  };

  for (const auto& target : targets) {
    auto analytic = objectives::evaluate(inst.params, inst.quant, inst.batch, inst.options, target.which,
                                         true, cfg.precision)
                        .gradient;
    if (cfg.sabotage) {
      bool found = false;
      for (std::size_t k = 0; k < analytic.size(); ++k) {
        if (inst.params.tensors[k].name == *cfg.sabotage) {
          for (double& v : analytic[k].values()) v *= 1.5;
          found = true;
        }
      }
      if (!found) throw ParameterError("gradcheck: unknown sabotage tensor " + *cfg.sabotage);
    }

    const auto numeric = finite_diff_grad(
        [&](std::span<const double> x) {
          unflatten(x, probe);
          return target.pick(
              objectives::evaluate(probe, inst.quant, inst.batch, inst.options, target.which, false).breakdown);
        },
        theta, cfg.step);

    ObjectiveReport obj;
    obj.objective = target.name;
    std::size_t off = 0;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
      TensorError te{inst.params.tensors[k].name, 0.0};
      for (std::size_t j = 0; j < analytic[k].size(); ++j) {
        te.max_rel_error = std::max(te.max_rel_error, relative_error(analytic[k].data()[j], numeric[off + j]));
      }
      off += analytic[k].size();
      if (te.max_rel_error >= obj.global_max) {
        obj.global_max = te.max_rel_error;
        obj.worst_tensor = te.tensor;
      }
      obj.tensors.push_back(std::move(te));
    }
    if (obj.global_max >= report.global_max) {
      report.global_max = obj.global_max;
      report.worst = obj.objective + ":" + obj.worst_tensor;
    }
    report.objectives.push_back(std::move(obj));
  }
  return report;
}

}  // namespace birq::verify

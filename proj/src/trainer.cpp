#include "birq/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "birq/features.hpp"
#include "birq/rng.hpp"

namespace birq::trainer {

std::size_t TrainConfig::resolved_tap_layer() const {
  return tap_layer == 0 ? encoder::default_k(layers) : tap_layer;
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("lr must be > 0");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.stack_factor < 1) throw ConfigError("stack_factor must be >= 1");
  if (cfg.layers < 1 || cfg.layers > 64) throw ConfigError("layers must be in [1, 64]");
  if (cfg.tap_layer > cfg.layers) throw ConfigError("tap_layer must be <= layers");
  if (cfg.codebook_size < 2) throw ConfigError("codebook_size must be >= 2");
  if (cfg.code_dim < 1) throw ConfigError("code_dim must be >= 1");
  if (cfg.num_codebooks < 1) throw ConfigError("num_codebooks must be >= 1");
  if (!(cfg.tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ConfigError("adam betas must be in [0, 1)");
  }
  if (!(cfg.adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(cfg.clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
  if (cfg.mask.stack_factor != cfg.stack_factor) {
    throw ConfigError("mask policy stack factor must match stack_factor");
  }
  masking::validate(cfg.mask);
  objectives::validate(cfg.weights);
}

encoder::EncoderConfig encoder_config(const TrainConfig& cfg, std::size_t input_dim) {
  encoder::EncoderConfig e;
  e.layers = cfg.layers;
  e.input_dim = input_dim;
  e.hidden_dim = cfg.hidden_dim;
  e.heads = cfg.heads;
  e.ff_dim = cfg.ff_dim;
  e.logits = cfg.codebook_size * cfg.num_codebooks;
  e.position_encoding = cfg.position_encoding;
  e.seed = cfg.seeds.init;
  return e;
}

quantizer::QuantizerState make_quantizer(const TrainConfig& cfg, std::size_t input_dim) {
  quantizer::QuantizerShape s;
  s.input_dim = input_dim;
  s.hidden_dim = cfg.hidden_dim;
  s.codebook_size = cfg.codebook_size;
  s.code_dim = cfg.code_dim;
  s.num_codebooks = cfg.num_codebooks;
  s.l2_normalize = cfg.codebook_l2_normalize;
  return quantizer::make_quantizer(cfg.seeds.init, s);
}

objectives::LossOptions loss_options(const TrainConfig& cfg) {
  objectives::LossOptions o;
  o.weights = cfg.weights;
  o.tau = cfg.tau;
  o.tap_layer = cfg.resolved_tap_layer();
  o.stop_label_grad = cfg.stop_label_grad;
  return o;
}

OptimizerState init_optimizer(const TrainConfig& cfg, const encoder::EncoderParams& p) {
  OptimizerState s;
  if (cfg.optimizer == OptimizerKind::adamw) {
    for (const auto& t : p.tensors) {
      s.first.emplace_back(t.value.rows(), t.value.cols());
      s.second.emplace_back(t.value.rows(), t.value.cols());
    }
  }
  return s;
}

double lr_schedule(std::uint64_t step, const TrainConfig& cfg) {
  if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.lr;
  return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

namespace {

void round_f32(Matrix& m) {
  for (double& v : m.values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

void apply_update(encoder::EncoderParams& params, OptimizerState& opt, std::span<const Matrix> gradient,
                  double lr, const TrainConfig& cfg) {
  if (gradient.size() != params.tensors.size()) throw ShapeError("apply_update: gradient count mismatch");
  ++opt.step;
  if (cfg.optimizer == OptimizerKind::sgd) {
    for (std::size_t k = 0; k < gradient.size(); ++k) {
      Matrix& w = params.tensors[k].value;
      const Matrix& g = gradient[k];
      for (std::size_t j = 0; j < w.size(); ++j) w.data()[j] -= lr * g.data()[j];
      if (cfg.master_fp32) round_f32(w);
    }
    return;
  }
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < gradient.size(); ++k) {
    Matrix& w = params.tensors[k].value;
    Matrix& m = opt.first[k];
    Matrix& v = opt.second[k];
    const Matrix& g = gradient[k];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.data()[j];
      m.data()[j] = cfg.beta1 * m.data()[j] + (1.0 - cfg.beta1) * gj;
      v.data()[j] = cfg.beta2 * v.data()[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m.data()[j] / c1;
      const double vhat = v.data()[j] / c2;
      w.data()[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * w.data()[j]);
    }
    if (cfg.master_fp32) {
      round_f32(w);
      round_f32(m);
      round_f32(v);
    }
  }
}

MetricsRecord train_step(encoder::EncoderParams& params, OptimizerState& opt,
                         const quantizer::QuantizerState& quant,
                         std::span<const objectives::Example> batch, const TrainConfig& cfg) {
  auto ev = objectives::evaluate(params, quant, batch, loss_options(cfg), objectives::Objective::combined, true);

  double sq = 0.0;
  for (std::size_t k = 0; k < ev.gradient.size(); ++k) {
    for (double g : ev.gradient[k].values()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in tensor " + params.tensors[k].name);
      }
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
    const double s = cfg.clip_norm / norm;
    for (auto& g : ev.gradient) {
      for (double& v : g.values()) v *= s;
    }
  }

  MetricsRecord rec;
  rec.lr = lr_schedule(opt.step, cfg);
  apply_update(params, opt, ev.gradient, rec.lr, cfg);

  rec.step = opt.step;
  rec.loss_total = ev.breakdown.combined;
  rec.loss_F = ev.breakdown.F_value;
  rec.loss_G = ev.breakdown.G_value;
  rec.mask_acc_anchor = ev.breakdown.mask_acc_anchor;
  rec.mask_acc_enh = ev.breakdown.mask_acc_enhanced;
  rec.codebook_util_enh = quantizer::codebook_utilization(ev.enhanced_all, quant.codebook_size());
  std::size_t agree = 0;
  for (std::size_t i = 0; i < ev.anchor_masked.size(); ++i) agree += ev.anchor_masked[i] == ev.enhanced_masked[i];
  rec.label_agreement = static_cast<double>(agree) / static_cast<double>(ev.anchor_masked.size());
  rec.grad_norm = norm;
  return rec;
}

// ---- metrics text -----------------------------------------------------------

std::string format_metrics_row(const MetricsRecord& m) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}", m.step, m.epoch, m.loss_total, m.loss_F,
                     m.loss_G, m.mask_acc_anchor, m.mask_acc_enh, m.codebook_util_anchor,
                     m.codebook_util_enh, m.label_agreement, m.grad_norm, m.lr);
}

MetricsRecord parse_metrics_row(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    fields.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (fields.size() != 12) throw FormatError("metrics row must have 12 fields");
  auto num = [](std::string_view s, auto& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || p != s.data() + s.size()) {
      throw FormatError("bad metrics field: " + std::string(s));
    }
  };
  MetricsRecord m;
  num(fields[0], m.step);
  num(fields[1], m.epoch);
  double* dst[] = {&m.loss_total, &m.loss_F, &m.loss_G, &m.mask_acc_anchor, &m.mask_acc_enh,
                   &m.codebook_util_anchor, &m.codebook_util_enh, &m.label_agreement, &m.grad_norm, &m.lr};
  for (std::size_t i = 0; i < 10; ++i) num(fields[i + 2], *dst[i]);
  return m;
}

// ---- trainer ----------------------------------------------------------------

std::vector<Matrix> prepare_dataset(std::span<const Matrix> raw, std::size_t stack_factor) {
  std::vector<Matrix> out;
  out.reserve(raw.size());
  for (const auto& m : raw) {
    features::FeatureSequence f{m, 0.01, false};
    out.push_back(features::normalize(features::stack_frames(f, stack_factor)).data);
  }
  return out;
}

Trainer::Trainer(TrainConfig cfg, std::vector<Matrix> dataset) : cfg_(std::move(cfg)), data_(std::move(dataset)) {
  validate(cfg_);
  if (data_.empty()) throw InputError("trainer: empty dataset");
  const std::size_t din = data_.front().cols();
  for (const auto& m : data_) {
    if (m.cols() != din) throw InputError("trainer: sequences have different feature dimensions");
    if (m.rows() < 1) throw InputError("trainer: empty sequence");
    if (!all_finite(m)) throw InputError("trainer: non-finite features");
  }
  quant_ = make_quantizer(cfg_, din);
  std::vector<std::uint32_t> all;
  for (const auto& m : data_) {
    std::vector<quantizer::HardLabels> per;
    for (const auto& q : quant_.sets) per.push_back(objectives::anchor_labels(q, m));
    all.insert(all.end(), per.front().indices.begin(), per.front().indices.end());
    anchors_.push_back(std::move(per));
  }
  anchor_util_ = quantizer::codebook_utilization(all, cfg_.codebook_size);
  params_ = encoder::init_encoder(encoder_config(cfg_, din));
  if (cfg_.master_fp32) {
    for (auto& t : params_.tensors) round_f32(t.value);
  }
  opt_ = init_optimizer(cfg_, params_);
}

std::size_t Trainer::steps_per_epoch() const noexcept {
  return (data_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
}

std::uint64_t Trainer::total_steps() const noexcept { return steps_per_epoch() * cfg_.epochs; }

std::vector<std::size_t> Trainer::epoch_order(std::uint64_t epoch) const {
  std::vector<std::size_t> order(data_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng::Engine eng(rng::derive(cfg_.seeds.data, rng::Role::shuffle, epoch));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(eng)]);
  }
  return order;
}

std::vector<objectives::Example> Trainer::batch_for_step(std::uint64_t step) const {
  const std::uint64_t epoch = step / steps_per_epoch();
  const std::size_t pos = static_cast<std::size_t>(step % steps_per_epoch());
  const auto order = epoch_order(epoch);
  const std::size_t begin = pos * cfg_.batch_size;
  const std::size_t end = std::min(begin + cfg_.batch_size, order.size());

  std::size_t frames = data_[order[begin]].rows();
  for (std::size_t i = begin; i < end; ++i) frames = std::min(frames, data_[order[i]].rows());

  std::vector<objectives::Example> batch;
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t seq = order[i];
    objectives::Example ex;
    ex.clean = head_rows(data_[seq], frames);
    ex.mask = masking::sample_mask(cfg_.mask, frames, rng::derive(cfg_.seeds.mask, rng::Role::mask, epoch, step, seq));
    ex.masked = masking::apply_mask(ex.clean, ex.mask, cfg_.mask,
                                    rng::derive(cfg_.seeds.mask, rng::Role::noise_fill, epoch, step, seq));
    for (std::size_t l = 0; l < quant_.sets.size(); ++l) {
      const auto& full = anchors_[seq][l].indices;
      ex.anchors.push_back({std::vector<std::uint32_t>(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(frames))});
      if (cfg_.gumbel_noise) {
        ex.noise.push_back(quantizer::sample_gumbel(
            rng::derive(cfg_.seeds.gumbel, rng::Role::gumbel, epoch, step, seq * quant_.sets.size() + l), frames,
            cfg_.codebook_size));
      }
    }
    batch.push_back(std::move(ex));
  }
  return batch;
}

MetricsRecord Trainer::step() {
  if (done()) throw ContractError("trainer: no steps left");
  const std::uint64_t s = opt_.step;
  const auto batch = batch_for_step(s);
  MetricsRecord rec = train_step(params_, opt_, quant_, batch, cfg_);
  rec.epoch = s / steps_per_epoch() + 1;
  rec.codebook_util_anchor = anchor_util_;
  return rec;
}

void Trainer::save(const std::filesystem::path& path) const { save_checkpoint(params_, opt_, path); }

void Trainer::resume(const std::filesystem::path& path) {
  load_checkpoint(path, params_, opt_);
  if (opt_.step > total_steps()) throw ConfigError("checkpoint is past the configured number of steps");
}

std::string checkpoint_name(std::uint64_t epoch) { return fmt::format("ckpt_epoch_{:04d}.bin", epoch); }

void run_pretrain(Trainer& trainer, const RunOptions& opts) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + opts.out_dir.string() + ": " + ec.message());
  const fs::path metrics_path = opts.out_dir / "metrics.csv";

  std::vector<std::string> kept;
  if (opts.resume_from) {
    trainer.resume(*opts.resume_from);
    std::ifstream in(metrics_path);
    std::string line;
    if (in && std::getline(in, line) && line == kMetricsHeader) {
      while (std::getline(in, line)) {
        if (!line.empty() && parse_metrics_row(line).step <= trainer.global_step()) kept.push_back(line);
      }
    }
  }
  std::ofstream out(metrics_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + metrics_path.string());
  out << kMetricsHeader << '\n';
  for (const auto& l : kept) out << l << '\n';
  out.flush();

  while (!trainer.done()) {
    MetricsRecord rec = trainer.step();
    out << format_metrics_row(rec) << '\n';
    out.flush();
    if (!out) throw IoError("write failed: " + metrics_path.string());
    if (opts.on_step) opts.on_step(rec);
    if (trainer.global_step() % trainer.steps_per_epoch() == 0) {
      trainer.save(opts.out_dir / checkpoint_name(trainer.global_step() / trainer.steps_per_epoch()));
    }
  }
}

}  // namespace birq::trainer

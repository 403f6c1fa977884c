#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "birq/encoder.hpp"
#include "birq/masking.hpp"
#include "birq/objectives.hpp"
#include "birq/quantizer.hpp"

namespace birq::trainer {

enum class OptimizerKind { sgd, adamw };

struct Seeds {
  std::uint64_t data = 0;    // epoch shuffles
  std::uint64_t mask = 0;    // span draws and noise fill
  std::uint64_t gumbel = 0;  // enhanced-label noise
  std::uint64_t init = 0;    // encoder weights, codebooks, projections
};

struct TrainConfig {
  // encoder
  std::size_t layers = 5;
  std::size_t hidden_dim = 64;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  bool position_encoding = true;
  std::size_t tap_layer = 0;  // 0 selects default_k(layers)
  // quantizer
  std::size_t codebook_size = 8;
  std::size_t code_dim = 16;
  std::size_t num_codebooks = 1;
  bool codebook_l2_normalize = false;
  // front end
  std::size_t stack_factor = 2;
  // masking
  masking::MaskPolicy mask;
  // objective
  objectives::PenaltyWeights weights;
  double tau = quantizer::kDefaultTemperature;
  bool gumbel_noise = true;
  bool stop_label_grad = false;
  // optimization
  OptimizerKind optimizer = OptimizerKind::adamw;
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 20;
  double clip_norm = 0.0;  // 0 disables clipping
  std::size_t epochs = 25;
  std::size_t batch_size = 8;
  /// Parameters and moments are rounded to binary32 after every update so
  /// float32 checkpoints capture the training state exactly.
  bool master_fp32 = true;
  Seeds seeds;

  [[nodiscard]] std::size_t resolved_tap_layer() const;
};

void validate(const TrainConfig& cfg);

[[nodiscard]] encoder::EncoderConfig encoder_config(const TrainConfig& cfg, std::size_t input_dim);
[[nodiscard]] quantizer::QuantizerState make_quantizer(const TrainConfig& cfg, std::size_t input_dim);
[[nodiscard]] objectives::LossOptions loss_options(const TrainConfig& cfg);

struct OptimizerState {
  std::vector<Matrix> first;   // adamw only
  std::vector<Matrix> second;  // adamw only
  std::uint64_t step = 0;
};

[[nodiscard]] OptimizerState init_optimizer(const TrainConfig& cfg, const encoder::EncoderParams& p);

struct MetricsRecord {
  std::uint64_t step = 0;   // 1-based update count
  std::uint64_t epoch = 0;  // 1-based
  double loss_total = 0.0;
  double loss_F = 0.0;
  double loss_G = 0.0;
  double mask_acc_anchor = 0.0;
  double mask_acc_enh = 0.0;
  double codebook_util_anchor = 0.0;
  double codebook_util_enh = 0.0;
  double label_agreement = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

inline constexpr std::string_view kMetricsHeader =
    "step,epoch,loss_total,loss_F,loss_G,mask_acc_anchor,mask_acc_enh,codebook_util_anchor,"
    "codebook_util_enh,label_agreement,grad_norm,lr";

[[nodiscard]] std::string format_metrics_row(const MetricsRecord& m);
[[nodiscard]] MetricsRecord parse_metrics_row(std::string_view line);

/// Linear ramp 0 -> lr over warmup_steps, then constant.
[[nodiscard]] double lr_schedule(std::uint64_t step, const TrainConfig& cfg);

/// One update of theta on a prepared batch with combined gradient
/// w1 dF + w2 dG. Fills the loss/accuracy/grad/lr fields of the record.
MetricsRecord train_step(encoder::EncoderParams& params, OptimizerState& opt,
                         const quantizer::QuantizerState& quant,
                         std::span<const objectives::Example> batch, const TrainConfig& cfg);

/// Applies an already computed gradient; exposed for reference trainers.
void apply_update(encoder::EncoderParams& params, OptimizerState& opt, std::span<const Matrix> gradient,
                  double lr, const TrainConfig& cfg);

// ---- checkpoints ------------------------------------------------------------

struct StoredTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> values;
};

/// "BIRQCKPT", u32 version=1, u32 count, then per tensor: u16 name length,
/// name bytes, u8 rank, u64 dims, f32 payload. All little-endian.
void write_tensor_file(const std::filesystem::path& path, std::span<const StoredTensor> tensors);
[[nodiscard]] std::vector<StoredTensor> read_tensor_file(const std::filesystem::path& path);

void save_checkpoint(const encoder::EncoderParams& params, const OptimizerState& opt,
                     const std::filesystem::path& path);
/// Loads into `params`/`opt`, whose shapes must already match the file.
void load_checkpoint(const std::filesystem::path& path, encoder::EncoderParams& params, OptimizerState& opt);

// ---- full runs --------------------------------------------------------------

/// Owns the mutable training state over a fixed, prepared dataset.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<Matrix> dataset);

  [[nodiscard]] std::size_t steps_per_epoch() const noexcept;
  [[nodiscard]] std::uint64_t total_steps() const noexcept;
  [[nodiscard]] std::uint64_t global_step() const noexcept { return opt_.step; }
  [[nodiscard]] bool done() const noexcept { return global_step() >= total_steps(); }

  /// Dataset order for a 0-based epoch (seeded shuffle).
  [[nodiscard]] std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;
  /// Sequences of the given 0-based global step, cropped, masked, with noise.
  [[nodiscard]] std::vector<objectives::Example> batch_for_step(std::uint64_t step) const;

  MetricsRecord step();

  void save(const std::filesystem::path& path) const;
  void resume(const std::filesystem::path& path);

  [[nodiscard]] const TrainConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const encoder::EncoderParams& params() const noexcept { return params_; }
  [[nodiscard]] const OptimizerState& optimizer() const noexcept { return opt_; }
  [[nodiscard]] const quantizer::QuantizerState& quantizer() const noexcept { return quant_; }
  [[nodiscard]] const std::vector<Matrix>& dataset() const noexcept { return data_; }
  [[nodiscard]] double anchor_utilization() const noexcept { return anchor_util_; }

 private:
  TrainConfig cfg_;
  std::vector<Matrix> data_;
  quantizer::QuantizerState quant_;
  std::vector<std::vector<quantizer::HardLabels>> anchors_;  // [sequence][codebook]
  double anchor_util_ = 0.0;
  encoder::EncoderParams params_;
  OptimizerState opt_;
};

/// Runs until the configured number of epochs completes. Writes metrics.csv
/// (appending when resuming) and ckpt_epoch_NNNN.bin at every epoch boundary.
/// `on_step` sees every record as it is produced.
struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const MetricsRecord&)> on_step;
};
void run_pretrain(Trainer& trainer, const RunOptions& opts);

[[nodiscard]] std::string checkpoint_name(std::uint64_t epoch);

/// Stack by cfg.stack_factor then normalize every sequence.
[[nodiscard]] std::vector<Matrix> prepare_dataset(std::span<const Matrix> raw, std::size_t stack_factor);

}  // namespace birq::trainer

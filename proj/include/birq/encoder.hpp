#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "birq/autodiff.hpp"
#include "birq/matrix.hpp"

// K-layer transformer encoder with a normalized tap at any layer and a linear
// logit head. Blocks are post-norm:
//   a = LN1(z + MHA(z)),  z' = LN2(a + W2 gelu(W1 a + b1) + b2)
// Query/key/value projections carry no bias; the output projection does.
//
// Parameter count (closed form, see parameter_count):
//   d_in*d_h + d_h                                   input projection
//   + K * (4*d_h^2 + d_h + 2*d_h*d_ff + d_ff + d_h + 4*d_h)   blocks
//   + d_h*N + N                                      logit head

namespace birq::encoder {

struct EncoderConfig {
  std::size_t layers = 5;       // K
  std::size_t input_dim = 80;   // d_in
  std::size_t hidden_dim = 64;  // d_h
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  std::size_t logits = 8;       // N (times the number of codebooks)
  bool position_encoding = true;
  std::uint64_t seed = 0;
};

void validate(const EncoderConfig& cfg);

struct Tensor {
  std::string name;
  Matrix value;
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<Tensor> tensors;

  [[nodiscard]] std::size_t scalar_count() const;
};

/// Per-block tensor slots, in storage order.
enum class Slot : std::size_t {
  q_weight,
  k_weight,
  v_weight,
  o_weight,
  o_bias,
  ln1_gain,
  ln1_bias,
  ff1_weight,
  ff1_bias,
  ff2_weight,
  ff2_bias,
  ln2_gain,
  ln2_bias,
  count_,
};
inline constexpr std::size_t kSlotsPerLayer = static_cast<std::size_t>(Slot::count_);
inline constexpr std::size_t kInputWeight = 0;
inline constexpr std::size_t kInputBias = 1;

[[nodiscard]] std::size_t layer_tensor(std::size_t layer, Slot slot);
[[nodiscard]] std::size_t head_weight_index(const EncoderConfig& cfg);
[[nodiscard]] std::size_t head_bias_index(const EncoderConfig& cfg);

[[nodiscard]] std::size_t parameter_count(const EncoderConfig& cfg);

[[nodiscard]] EncoderParams init_encoder(const EncoderConfig& cfg);

/// k = max(1, round(0.7 K)) with exact ties rounded down: 5 -> 3, 10 -> 7.
[[nodiscard]] std::size_t default_k(std::size_t layers);

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kTapEps = 1e-12;

[[nodiscard]] Matrix position_encoding(std::size_t frames, std::size_t dim);

// ---- differentiable forward ------------------------------------------------

/// Puts every parameter tensor on the tape, as parameters or as constants.
[[nodiscard]] std::vector<ad::Var> bind(ad::Tape& tape, const EncoderParams& params, bool trainable);

struct Graph {
  std::vector<ad::Var> layers;  // z^(1) .. z^(max_layer)
  ad::Var logits;               // only when max_layer == K
};

/// Runs layers 1..max_layer on frames-as-rows input `x` (T x d_in).
[[nodiscard]] Graph forward(const EncoderConfig& cfg, std::span<const ad::Var> params, ad::Var x,
                            std::size_t max_layer);

/// Per-frame standardized z^(k).
[[nodiscard]] ad::Var tap(const Graph& g, std::size_t k);

// ---- value-only forward -----------------------------------------------------

struct ForwardTrace {
  std::vector<Matrix> layers;  // layers[l-1] = z^(l), each T x d_h
  Matrix logits;               // T x N
};

[[nodiscard]] ForwardTrace forward(const EncoderParams& params, const Matrix& x);
[[nodiscard]] Matrix tap(const ForwardTrace& trace, std::size_t k);

}  // namespace birq::encoder

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "birq/autodiff.hpp"
#include "birq/matrix.hpp"

// Fixed random-projection quantization. A codebook and the projections are
// drawn once from seeds and never touched again; frames are labelled either by
// hard nearest-neighbour assignment or by a Gumbel-softmax relaxation of it.

namespace birq::quantizer {

/// N x d_c code entries with cached squared norms.
class Codebook {
 public:
  Codebook(Matrix entries, std::uint64_t seed);
  [[nodiscard]] const Matrix& entries() const noexcept { return entries_; }
  [[nodiscard]] std::span<const double> norms() const noexcept { return norms_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.rows(); }
  [[nodiscard]] std::size_t dim() const noexcept { return entries_.cols(); }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

 private:
  Matrix entries_;
  std::vector<double> norms_;
  std::uint64_t seed_;
};

/// d_in x d_c projection matrix applied as u = X P (frames as rows).
struct RandomProjection {
  Matrix matrix;
  std::uint64_t seed = 0;
  [[nodiscard]] std::size_t input_dim() const noexcept { return matrix.rows(); }
  [[nodiscard]] std::size_t code_dim() const noexcept { return matrix.cols(); }
};

struct HardLabels {
  std::vector<std::uint32_t> indices;
};

/// T x N, each row on the probability simplex.
struct SoftLabels {
  Matrix rows;
};

/// T x N Gumbel(0, 1) draws v = -ln(-ln q).
struct GumbelNoise {
  Matrix values;
  std::uint64_t seed = 0;
};

inline constexpr double kDefaultTemperature = 0.5;
inline constexpr double kUniformClamp = 1e-12;

[[nodiscard]] Codebook init_codebook(std::uint64_t seed, std::size_t n, std::size_t code_dim,
                                     bool l2_normalize = false);
[[nodiscard]] RandomProjection init_projection(std::uint64_t seed, std::size_t input_dim,
                                               std::size_t code_dim);

/// Frames-as-rows projection: (T x d_in) -> (T x d_c).
[[nodiscard]] Matrix project(const RandomProjection& p, const Matrix& x);
[[nodiscard]] ad::Var project(const RandomProjection& p, ad::Var x);

[[nodiscard]] HardLabels assign_hard(const Matrix& u, const Codebook& c);

[[nodiscard]] SoftLabels assign_soft(const Matrix& u, const Codebook& c, double tau,
                                     const GumbelNoise* noise = nullptr);
/// Differentiable with respect to u.
[[nodiscard]] ad::Var assign_soft(ad::Var u, const Codebook& c, double tau,
                                  const GumbelNoise* noise = nullptr);

[[nodiscard]] GumbelNoise sample_gumbel(std::uint64_t seed, std::size_t frames, std::size_t n);

/// Normalized entropy of the empirical index distribution, in [0, 1].
[[nodiscard]] double codebook_utilization(std::span<const std::uint32_t> labels, std::size_t n);

/// One codebook with its anchoring (raw input) and enhancing (layer tap)
/// projections.
struct QuantizerSet {
  Codebook codebook;
  RandomProjection anchor;
  RandomProjection enhance;
};

struct QuantizerState {
  std::vector<QuantizerSet> sets;
  [[nodiscard]] std::size_t codebook_size() const { return sets.front().codebook.size(); }
};

struct QuantizerShape {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t codebook_size = 8;
  std::size_t code_dim = 16;
  std::size_t num_codebooks = 1;
  bool l2_normalize = false;
};

[[nodiscard]] QuantizerState make_quantizer(std::uint64_t seed, const QuantizerShape& shape);

}  // namespace birq::quantizer

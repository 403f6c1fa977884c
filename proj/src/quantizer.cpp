#include "birq/quantizer.hpp"

#include <cmath>
#include <random>

#include "birq/kernels.hpp"
#include "birq/rng.hpp"

namespace birq::quantizer {

Codebook::Codebook(Matrix entries, std::uint64_t seed)
    : entries_(std::move(entries)), norms_(entries_.rows()), seed_(seed) {
  if (entries_.rows() < 2) throw ParameterError("Codebook: need at least two entries");
  for (std::size_t n = 0; n < entries_.rows(); ++n) {
    double s = 0.0;
    for (double v : entries_.row(n)) s += v * v;
    norms_[n] = s;
  }
  for (std::size_t a = 0; a < entries_.rows(); ++a) {
    for (std::size_t b = a + 1; b < entries_.rows(); ++b) {
      if (std::equal(entries_.row(a).begin(), entries_.row(a).end(), entries_.row(b).begin())) {
        throw ParameterError("Codebook: entries must be pairwise distinct");
      }
    }
  }
}

Codebook init_codebook(std::uint64_t seed, std::size_t n, std::size_t code_dim, bool l2_normalize) {
  if (n < 2) throw ParameterError("init_codebook: N must be >= 2");
  if (code_dim < 1) throw ParameterError("init_codebook: d_c must be >= 1");
  Matrix c(n, code_dim);
  rng::Engine eng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : c.values()) v = normal(eng);
  if (l2_normalize) {
    for (std::size_t i = 0; i < n; ++i) {
      auto r = c.row(i);
      double s = 0.0;
      for (double v : r) s += v * v;
      const double inv = 1.0 / std::sqrt(s);
      for (double& v : r) v *= inv;
    }
  }
  return Codebook(std::move(c), seed);
}

RandomProjection init_projection(std::uint64_t seed, std::size_t input_dim, std::size_t code_dim) {
  if (input_dim < 1 || code_dim < 1) throw ParameterError("init_projection: zero dimension");
  RandomProjection p{Matrix(input_dim, code_dim), seed};
  rng::Engine eng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(input_dim)));
  for (double& v : p.matrix.values()) v = normal(eng);
  return p;
}

Matrix project(const RandomProjection& p, const Matrix& x) {
  if (x.cols() != p.input_dim()) throw ShapeError("project: input dimension does not match projection");
  return kernels::matmul(x, p.matrix);
}

ad::Var project(const RandomProjection& p, ad::Var x) {
  if (x.cols() != p.input_dim()) throw ShapeError("project: input dimension does not match projection");
  return ad::matmul(x, x.tape().constant(p.matrix));
}

HardLabels assign_hard(const Matrix& u, const Codebook& c) {
  if (u.cols() != c.dim()) throw ShapeError("assign_hard: code dimension mismatch");
  return {kernels::argmin_rows(kernels::sq_distances(u, c.entries(), c.norms()))};
}

ad::Var assign_soft(ad::Var u, const Codebook& c, double tau, const GumbelNoise* noise) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("assign_soft: tau must be > 0");
  if (u.cols() != c.dim()) throw ShapeError("assign_soft: code dimension mismatch");
  ad::Var d = ad::sq_distances(u, c.entries());
  if (noise != nullptr) {
    if (noise->values.rows() != u.rows() || noise->values.cols() != c.size()) {
      throw ShapeError("assign_soft: Gumbel noise must be T x N");
    }
    d = ad::add(d, u.tape().constant(noise->values));
  }
  return ad::softmax_rows(ad::scale(d, -1.0 / tau));
}

SoftLabels assign_soft(const Matrix& u, const Codebook& c, double tau, const GumbelNoise* noise) {
  ad::Tape tape;
  return {assign_soft(tape.constant(u), c, tau, noise).value()};
}

GumbelNoise sample_gumbel(std::uint64_t seed, std::size_t frames, std::size_t n) {
  if (frames < 1 || n < 1) throw ParameterError("sample_gumbel: empty shape");
  GumbelNoise g{Matrix(frames, n), seed};
  rng::Engine eng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (double& v : g.values.values()) {
    const double q = std::clamp(unif(eng), kUniformClamp, 1.0 - kUniformClamp);
    v = -std::log(-std::log(q));
  }
  return g;
}

double codebook_utilization(std::span<const std::uint32_t> labels, std::size_t n) {
  if (labels.empty()) throw ParameterError("codebook_utilization: no labels");
  if (n < 2) throw ParameterError("codebook_utilization: N must be >= 2");
  std::vector<std::size_t> counts(n);
  for (auto l : labels) {
    if (l >= n) throw ShapeError("codebook_utilization: label out of range");
    ++counts[l];
  }
  double h = 0.0;
  const double total = static_cast<double>(labels.size());
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(n));
}

QuantizerState make_quantizer(std::uint64_t seed, const QuantizerShape& shape) {
  if (shape.num_codebooks < 1) throw ParameterError("make_quantizer: num_codebooks must be >= 1");
  QuantizerState q;
  for (std::size_t l = 0; l < shape.num_codebooks; ++l) {
    q.sets.push_back(QuantizerSet{
        init_codebook(rng::derive(seed, rng::Role::codebook, 0, 0, l), shape.codebook_size,
                      shape.code_dim, shape.l2_normalize),
        init_projection(rng::derive(seed, rng::Role::projection_anchor, 0, 0, l), shape.input_dim,
                        shape.code_dim),
        init_projection(rng::derive(seed, rng::Role::projection_enhance, 0, 0, l), shape.hidden_dim,
                        shape.code_dim)});
  }
  return q;
}

}  // namespace birq::quantizer

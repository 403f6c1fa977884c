#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "birq/matrix.hpp"

// Tape-based reverse-mode differentiation over dense matrices.
//
// A Tape records every operation applied to its Vars. Calling backward() on a
// 1x1 result walks the tape in reverse, accumulating adjoints into every node
// that (transitively) depends on a parameter. Nodes live in a deque, so
// references returned by value() stay valid while the tape grows.

namespace birq::ad {

enum class Precision {
  f64,
  /// Every op result and every adjoint is rounded to binary32 after it is
  /// produced. Arithmetic inside an op still runs in double.
  f32,
};

class Tape;

class Var {
 public:
  Var() = default;
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] Tape& tape() const noexcept { return *tape_; }
  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] std::size_t rows() const { return value().rows(); }
  [[nodiscard]] std::size_t cols() const { return value().cols(); }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(Precision p = Precision::f64) : precision_(p) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  /// Seeds d(out)/d(out) = 1 and propagates. `out` must be 1x1.
  void backward(Var out);

  /// Adjoint of `v`; an all-zero matrix of v's shape if nothing reached it.
  [[nodiscard]] Matrix grad(Var v) const;

  [[nodiscard]] Precision precision() const noexcept { return precision_; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  // Op-implementer interface.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward fn);
  [[nodiscard]] const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] const Matrix& adjoint(std::size_t id) const { return nodes_[id].grad; }
  [[nodiscard]] bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// grad(id) += g, then rounded per the tape precision. No-op for nodes that
  /// do not need gradients.
  void accumulate(std::size_t id, const Matrix& g);
  void round(Matrix& m) const;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };
  Var push(Matrix value, bool needs_grad, Backward fn);

  Precision precision_;
  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

// ---- operations -----------------------------------------------------------

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Adds the 1 x n row `bias` to every row of `a`.
Var add_row(Var a, Var bias);
Var scale(Var a, double s);
/// Tanh-approximated GELU.
Var gelu(Var a);
Var softmax_rows(Var a);
/// Row-wise layer normalization with learned gain and bias (both 1 x n).
Var layer_norm(Var x, Var gain, Var bias, double eps);
/// Row-wise standardization: zero mean, unit population std (eps inside sqrt).
Var standardize_rows(Var x, double eps);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
/// Squared Euclidean distance from each row of `u` to each fixed code row.
Var sq_distances(Var u, const Matrix& codebook);
/// -sum_{t in rows} labels_t . log softmax(logits_t); labels may carry gradient.
Var masked_cross_entropy(Var logits, Var labels, std::span<const std::size_t> rows);
/// Same with one-hot labels given by index.
Var masked_cross_entropy(Var logits, std::span<const std::uint32_t> labels,
                         std::span<const std::size_t> rows);
/// Identity on values, blocks gradients.
Var stop_gradient(Var x);
/// Sum of all entries as a 1x1.
Var sum(Var x);

}  // namespace birq::ad

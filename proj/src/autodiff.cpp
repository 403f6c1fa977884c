#include "birq/autodiff.hpp"

#include <cmath>

#include "birq/kernels.hpp"

namespace birq::ad {

// ---- tape -----------------------------------------------------------------

Var Tape::push(Matrix value, bool needs_grad, Backward fn) {
  round(value);
  nodes_.push_back(Node{std::move(value), Matrix{}, needs_grad, needs_grad ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
  bool needs = false;
  for (const Var& v : inputs) needs = needs || nodes_[v.id()].needs_grad;
  return push(std::move(value), needs, std::move(fn));
}

void Tape::round(Matrix& m) const {
  if (precision_ != Precision::f32) return;
  for (double& v : m.values()) v = static_cast<double>(static_cast<float>(v));
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (!g.same_shape(n.value)) throw ShapeError("Tape::accumulate: adjoint shape mismatch");
  if (n.grad.empty() && !n.value.empty()) {
    n.grad = g;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) n.grad.data()[i] += g.data()[i];
  }
  round(n.grad);
}

void Tape::backward(Var out) {
  if (out.rows() != 1 || out.cols() != 1) throw ShapeError("Tape::backward: output must be 1x1");
  if (!nodes_[out.id()].needs_grad) return;
  accumulate(out.id(), Matrix(1, 1, 1.0));
  for (std::size_t i = out.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

// ---- operations -----------------------------------------------------------

namespace {

Matrix neg_copy(const Matrix& m) {
  Matrix r = m;
  for (double& v : r.values()) v = -v;
  return r;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tp = a.tape();
  return tp.record(kernels::matmul(a.value(), b.value()), {a, b},
                   [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                     const Matrix& g = t.adjoint(self);
                     if (t.needs_grad(ia)) t.accumulate(ia, kernels::matmul_nt(g, t.value(ib)));
                     if (t.needs_grad(ib)) t.accumulate(ib, kernels::matmul_tn(t.value(ia), g));
                   });
}

Var matmul_nt(Var a, Var b) {
  Tape& tp = a.tape();
  return tp.record(kernels::matmul_nt(a.value(), b.value()), {a, b},
                   [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                     const Matrix& g = t.adjoint(self);
                     if (t.needs_grad(ia)) t.accumulate(ia, kernels::matmul(g, t.value(ib)));
                     if (t.needs_grad(ib)) t.accumulate(ib, kernels::matmul_tn(g, t.value(ia)));
                   });
}

Var add(Var a, Var b) {
  if (!a.value().same_shape(b.value())) throw ShapeError("add: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.value().data()[i];
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  if (!a.value().same_shape(b.value())) throw ShapeError("sub: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.value().data()[i];
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    t.accumulate(ia, g);
    if (t.needs_grad(ib)) t.accumulate(ib, neg_copy(g));
  });
}

Var add_row(Var a, Var bias) {
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != a.cols()) throw ShapeError("add_row: bias must be 1 x cols");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv(0, j);
  }
  return a.tape().record(std::move(out), {a, bias},
                         [ia = a.id(), ib = bias.id()](Tape& t, std::size_t self) {
                           const Matrix& g = t.adjoint(self);
                           t.accumulate(ia, g);
                           if (t.needs_grad(ib)) {
                             Matrix gb(1, g.cols());
                             for (std::size_t i = 0; i < g.rows(); ++i) {
                               for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
                             }
                             t.accumulate(ib, gb);
                           }
                         });
}

Var scale(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.values()) v *= s;
  return a.tape().record(std::move(out), {a}, [ia = a.id(), s](Tape& t, std::size_t self) {
    Matrix g = t.adjoint(self);
    for (double& v : g.values()) v *= s;
    t.accumulate(ia, g);
  });
}

Var gelu(Var a) {
  Matrix out = a.value();
  for (double& x : out.values()) x = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  return a.tape().record(std::move(out), {a}, [ia = a.id()](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ia);
    Matrix g = t.adjoint(self);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.data()[i];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + th) +
                       0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      g.data()[i] *= d;
    }
    t.accumulate(ia, g);
  });
}

Var softmax_rows(Var a) {
  return a.tape().record(kernels::softmax_rows(a.value()), {a},
                         [ia = a.id()](Tape& t, std::size_t self) {
                           const Matrix& y = t.value(self);
                           const Matrix& gy = t.adjoint(self);
                           Matrix gx(y.rows(), y.cols());
                           for (std::size_t i = 0; i < y.rows(); ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < y.cols(); ++j) dot += gy(i, j) * y(i, j);
                             for (std::size_t j = 0; j < y.cols(); ++j) {
                               gx(i, j) = y(i, j) * (gy(i, j) - dot);
                             }
                           }
                           t.accumulate(ia, gx);
                         });
}

namespace {

struct RowMoments {
  std::vector<double> inv_std;
  Matrix normalized;
};

RowMoments normalize_rows(const Matrix& x, double eps) {
  RowMoments m{std::vector<double>(x.rows()), Matrix(x.rows(), x.cols())};
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    m.inv_std[i] = inv;
    for (std::size_t j = 0; j < r.size(); ++j) m.normalized(i, j) = (r[j] - mean) * inv;
  }
  return m;
}

// d/dx of row standardization given d/dxhat.
Matrix standardize_backward(const Matrix& xhat, const std::vector<double>& inv_std,
                            const Matrix& gxhat) {
  Matrix gx(xhat.rows(), xhat.cols());
  const double n = static_cast<double>(xhat.cols());
  for (std::size_t i = 0; i < xhat.rows(); ++i) {
    double mg = 0.0, mgx = 0.0;
    for (std::size_t j = 0; j < xhat.cols(); ++j) {
      mg += gxhat(i, j);
      mgx += gxhat(i, j) * xhat(i, j);
    }
    mg /= n;
    mgx /= n;
    for (std::size_t j = 0; j < xhat.cols(); ++j) {
      gx(i, j) = inv_std[i] * (gxhat(i, j) - mg - xhat(i, j) * mgx);
    }
  }
  return gx;
}

}  // namespace

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  if (gv.rows() != 1 || gv.cols() != x.cols() || !gv.same_shape(bv)) {
    throw ShapeError("layer_norm: gain/bias must be 1 x cols");
  }
  RowMoments m = normalize_rows(x.value(), eps);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = gv(0, j) * m.normalized(i, j) + bv(0, j);
  }
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [ix = x.id(), ig = gain.id(), ib = bias.id(), m = std::move(m)](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        const Matrix& gv = t.value(ig);
        if (t.needs_grad(ig) || t.needs_grad(ib)) {
          Matrix gg(1, g.cols()), gb(1, g.cols());
          for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) {
              gg(0, j) += g(i, j) * m.normalized(i, j);
              gb(0, j) += g(i, j);
            }
          }
          t.accumulate(ig, gg);
          t.accumulate(ib, gb);
        }
        if (t.needs_grad(ix)) {
          Matrix gxhat = g;
          for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) gxhat(i, j) *= gv(0, j);
          }
          t.accumulate(ix, standardize_backward(m.normalized, m.inv_std, gxhat));
        }
      });
}

Var standardize_rows(Var x, double eps) {
  RowMoments m = normalize_rows(x.value(), eps);
  Matrix out = m.normalized;
  return x.tape().record(std::move(out), {x}, [ix = x.id(), m = std::move(m)](Tape& t, std::size_t self) {
    t.accumulate(ix, standardize_backward(m.normalized, m.inv_std, t.adjoint(self)));
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Matrix& xv = x.value();
  if (begin + count > xv.cols()) throw ShapeError("slice_cols: range out of bounds");
  Matrix out(xv.rows(), count);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    for (std::size_t j = 0; j < count; ++j) out(i, j) = xv(i, begin + j);
  }
  return x.tape().record(std::move(out), {x}, [ix = x.id(), begin](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& xv = t.value(ix);
    Matrix gx(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, begin + j) = g(i, j);
    }
    t.accumulate(ix, gx);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  Tape& tp = parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  bool needs = false;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
    }
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
    needs = needs || tp.needs_grad(p.id());
  }
  // record() only inspects the listed inputs; pass one that carries the
  // gradient requirement of the whole group.
  Var carrier = parts.front();
  for (const Var& p : parts) {
    if (tp.needs_grad(p.id())) carrier = p;
  }
  return tp.record(std::move(out), {carrier}, [ids, offsets](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.needs_grad(ids[k])) continue;
      const Matrix& pv = t.value(ids[k]);
      Matrix gp(pv.rows(), pv.cols());
      for (std::size_t i = 0; i < pv.rows(); ++i) {
        for (std::size_t j = 0; j < pv.cols(); ++j) gp(i, j) = g(i, offsets[k] + j);
      }
      t.accumulate(ids[k], gp);
    }
  });
}

Var sq_distances(Var u, const Matrix& codebook) {
  std::vector<double> norms(codebook.rows());
  for (std::size_t n = 0; n < codebook.rows(); ++n) {
    double s = 0.0;
    for (double v : codebook.row(n)) s += v * v;
    norms[n] = s;
  }
  Matrix d = kernels::sq_distances(u.value(), codebook, norms);
  return u.tape().record(std::move(d), {u}, [iu = u.id(), codebook](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& uv = t.value(iu);
    // dD(t,n)/du_t = 2 (u_t - c_n)
    Matrix gc = kernels::matmul(g, codebook);
    Matrix gu(uv.rows(), uv.cols());
    for (std::size_t i = 0; i < uv.rows(); ++i) {
      double rs = 0.0;
      for (std::size_t n = 0; n < g.cols(); ++n) rs += g(i, n);
      for (std::size_t j = 0; j < uv.cols(); ++j) gu(i, j) = 2.0 * (rs * uv(i, j) - gc(i, j));
    }
    t.accumulate(iu, gu);
  });
}

namespace {

void check_rows(std::span<const std::size_t> rows, std::size_t limit) {
  if (rows.empty()) throw ContractError("masked_cross_entropy: empty mask");
  for (std::size_t r : rows) {
    if (r >= limit) throw ShapeError("masked_cross_entropy: masked row out of range");
  }
}

}  // namespace

Var masked_cross_entropy(Var logits, Var labels, std::span<const std::size_t> rows) {
  const Matrix& lv = logits.value();
  const Matrix& yv = labels.value();
  if (!lv.same_shape(yv)) throw ShapeError("masked_cross_entropy: logits/labels shape mismatch");
  check_rows(rows, lv.rows());
  Matrix logp = kernels::log_softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t r : rows) {
    for (std::size_t n = 0; n < lv.cols(); ++n) loss -= yv(r, n) * logp(r, n);
  }
  std::vector<std::size_t> kept(rows.begin(), rows.end());
  return logits.tape().record(
      Matrix(1, 1, loss), {logits, labels},
      [il = logits.id(), iy = labels.id(), kept = std::move(kept), logp = std::move(logp)](
          Tape& t, std::size_t self) {
        const double g = t.adjoint(self)(0, 0);
        const Matrix& yv = t.value(iy);
        if (t.needs_grad(il)) {
          Matrix gl(logp.rows(), logp.cols());
          for (std::size_t r : kept) {
            double ysum = 0.0;
            for (std::size_t n = 0; n < logp.cols(); ++n) ysum += yv(r, n);
            for (std::size_t n = 0; n < logp.cols(); ++n) {
              gl(r, n) += g * (ysum * std::exp(logp(r, n)) - yv(r, n));
            }
          }
          t.accumulate(il, gl);
        }
        if (t.needs_grad(iy)) {
          Matrix gy(logp.rows(), logp.cols());
          for (std::size_t r : kept) {
            for (std::size_t n = 0; n < logp.cols(); ++n) gy(r, n) += -g * logp(r, n);
          }
          t.accumulate(iy, gy);
        }
      });
}

Var masked_cross_entropy(Var logits, std::span<const std::uint32_t> labels,
                         std::span<const std::size_t> rows) {
  const Matrix& lv = logits.value();
  if (labels.size() != lv.rows()) throw ShapeError("masked_cross_entropy: label count != rows");
  check_rows(rows, lv.rows());
  Matrix logp = kernels::log_softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t r : rows) {
    if (labels[r] >= lv.cols()) throw ShapeError("masked_cross_entropy: label index out of range");
    loss -= logp(r, labels[r]);
  }
  std::vector<std::size_t> kept(rows.begin(), rows.end());
  std::vector<std::uint32_t> idx(labels.begin(), labels.end());
  return logits.tape().record(
      Matrix(1, 1, loss), {logits},
      [il = logits.id(), kept = std::move(kept), idx = std::move(idx), logp = std::move(logp)](
          Tape& t, std::size_t self) {
        const double g = t.adjoint(self)(0, 0);
        Matrix gl(logp.rows(), logp.cols());
        for (std::size_t r : kept) {
          for (std::size_t n = 0; n < logp.cols(); ++n) gl(r, n) += g * std::exp(logp(r, n));
          gl(r, idx[r]) -= g;
        }
        t.accumulate(il, gl);
      });
}

Var stop_gradient(Var x) { return x.tape().constant(x.value()); }

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape().record(Matrix(1, 1, s), {x}, [ix = x.id()](Tape& t, std::size_t self) {
    const Matrix& xv = t.value(ix);
    t.accumulate(ix, Matrix(xv.rows(), xv.cols(), t.adjoint(self)(0, 0)));
  });
}

}  // namespace birq::ad

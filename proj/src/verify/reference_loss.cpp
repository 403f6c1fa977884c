#include <array>
#include <cmath>

#include "birq/verify.hpp"

// A second, deliberately naive implementation of the per-sequence losses:
// fixed-size stack buffers, scalar loops, no tape and no shared kernels.

namespace birq::verify {
namespace {

constexpr std::size_t kMaxT = 32;
constexpr std::size_t kMaxD = 64;
constexpr std::size_t kMaxN = 32;

using Frames = std::array<double, kMaxT * kMaxD>;

struct Dims {
  std::size_t t, din, dh, dff, heads, n;
};

const double* w(const encoder::EncoderParams& p, std::size_t idx) { return p.tensors[idx].value.data(); }

// out[t, j] = sum_i in[t, i] * W[i, j] + b[j]
void affine(const double* in, std::size_t t, std::size_t din, const double* W, const double* b, std::size_t dout,
            double* out) {
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t j = 0; j < dout; ++j) {
      double s = b != nullptr ? b[j] : 0.0;
      for (std::size_t i = 0; i < din; ++i) s += in[r * din + i] * W[i * dout + j];
      out[r * dout + j] = s;
    }
  }
}

void norm_rows(double* x, std::size_t t, std::size_t d, const double* gain, const double* bias, double eps) {
  for (std::size_t r = 0; r < t; ++r) {
    double* row = x + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (row[j] - mean) * inv;
      row[j] = gain != nullptr ? gain[j] * xhat + bias[j] : xhat;
    }
  }
}

void run_layers(const encoder::EncoderParams& p, const Dims& dm, const Matrix& input, std::size_t layers,
                Frames& z) {
  using encoder::Slot;
  affine(input.data(), dm.t, dm.din, w(p, encoder::kInputWeight), w(p, encoder::kInputBias), dm.dh, z.data());
  if (p.config.position_encoding) {
    for (std::size_t r = 0; r < dm.t; ++r) {
      for (std::size_t i = 0; i < dm.dh; ++i) {
        const double angle =
            static_cast<double>(r) / std::pow(10000.0, static_cast<double>(i - i % 2) / static_cast<double>(dm.dh));
        z[r * dm.dh + i] += (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
    }
  }
  const std::size_t dk = dm.dh / dm.heads;
  Frames q{}, k{}, v{}, ctx{}, a{}, tmp{};
  std::array<double, kMaxT * 2 * kMaxD> hid{};
  for (std::size_t l = 0; l < layers; ++l) {
    auto at = [&](Slot s) { return w(p, encoder::layer_tensor(l, s)); };
    affine(z.data(), dm.t, dm.dh, at(Slot::q_weight), nullptr, dm.dh, q.data());
    affine(z.data(), dm.t, dm.dh, at(Slot::k_weight), nullptr, dm.dh, k.data());
    affine(z.data(), dm.t, dm.dh, at(Slot::v_weight), nullptr, dm.dh, v.data());
    for (std::size_t h = 0; h < dm.heads; ++h) {
      for (std::size_t r = 0; r < dm.t; ++r) {
        std::array<double, kMaxT> s{};
        double top = -INFINITY;
        for (std::size_t c = 0; c < dm.t; ++c) {
          double dot = 0.0;
          for (std::size_t j = 0; j < dk; ++j) dot += q[r * dm.dh + h * dk + j] * k[c * dm.dh + h * dk + j];
          s[c] = dot / std::sqrt(static_cast<double>(dk));
          top = std::max(top, s[c]);
        }
        double total = 0.0;
        for (std::size_t c = 0; c < dm.t; ++c) total += (s[c] = std::exp(s[c] - top));
        for (std::size_t j = 0; j < dk; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < dm.t; ++c) acc += s[c] / total * v[c * dm.dh + h * dk + j];
          ctx[r * dm.dh + h * dk + j] = acc;
        }
      }
    }
    affine(ctx.data(), dm.t, dm.dh, at(Slot::o_weight), at(Slot::o_bias), dm.dh, a.data());
    for (std::size_t i = 0; i < dm.t * dm.dh; ++i) a[i] += z[i];
    norm_rows(a.data(), dm.t, dm.dh, at(Slot::ln1_gain), at(Slot::ln1_bias), encoder::kLayerNormEps);
    affine(a.data(), dm.t, dm.dh, at(Slot::ff1_weight), at(Slot::ff1_bias), dm.dff, hid.data());
    for (std::size_t i = 0; i < dm.t * dm.dff; ++i) {
      const double x = hid[i];
      hid[i] = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
    }
    affine(hid.data(), dm.t, dm.dff, at(Slot::ff2_weight), at(Slot::ff2_bias), dm.dh, tmp.data());
    for (std::size_t i = 0; i < dm.t * dm.dh; ++i) z[i] = a[i] + tmp[i];
    norm_rows(z.data(), dm.t, dm.dh, at(Slot::ln2_gain), at(Slot::ln2_bias), encoder::kLayerNormEps);
  }
}

// Row r of x (T x d) projected by P (d x dc), squared distance to every entry.
void distances(const double* x, std::size_t d, const Matrix& P, const Matrix& C, double* out) {
  const std::size_t dc = P.cols();
  std::array<double, kMaxD> u{};
  for (std::size_t j = 0; j < dc; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += x[i] * P(i, j);
    u[j] = s;
  }
  for (std::size_t n = 0; n < C.rows(); ++n) {
    double s = 0.0;
    for (std::size_t j = 0; j < dc; ++j) s += (u[j] - C(n, j)) * (u[j] - C(n, j));
    out[n] = s;
  }
}

}  // namespace

double DualCheck::max_deviation() const noexcept {
  return std::max(std::abs(lower_module - lower_reference), std::abs(upper_module - upper_reference));
}

double reference_masked_ce(std::span<const double> logits, std::span<const double> labels, std::size_t frames,
                           std::size_t n, std::span<const std::size_t> masked) {
  if (logits.size() != frames * n || labels.size() != frames * n) throw ShapeError("reference_masked_ce: shape");
  double loss = 0.0;
  for (std::size_t r : masked) {
    if (r >= frames) throw ShapeError("reference_masked_ce: masked row out of range");
    double top = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) top = std::max(top, logits[r * n + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(logits[r * n + j] - top);
    const double lse = top + std::log(total);
    for (std::size_t j = 0; j < n; ++j) loss -= labels[r * n + j] * (logits[r * n + j] - lse);
  }
  return loss;
}

DualCheck dual_impl_loss_check(const TinyInstance& inst) {
  const auto& cfg = inst.params.config;
  const auto& quant = inst.quant;
  const std::size_t L = quant.sets.size();
  const std::size_t N = quant.codebook_size();
  if (cfg.hidden_dim > kMaxD || cfg.input_dim > kMaxD || cfg.ff_dim > 2 * kMaxD || N * L > kMaxN) {
    throw ParameterError("dual_impl_loss_check: instance exceeds reference buffer sizes");
  }
  DualCheck out;
  const auto module = objectives::combined_loss(inst.params, quant, inst.batch, inst.options);
  out.lower_module = module.G_value;
  out.upper_module = module.F_value;

  double fsum = 0.0, gsum = 0.0;
  for (const auto& ex : inst.batch) {
    const Dims dm{ex.clean.rows(), cfg.input_dim, cfg.hidden_dim, cfg.ff_dim, cfg.heads, cfg.logits};
    if (dm.t > kMaxT) throw ParameterError("dual_impl_loss_check: sequence too long");

    Frames zp{}, zc{};
    run_layers(inst.params, dm, ex.masked, cfg.layers, zp);
    std::array<double, kMaxT * kMaxN> logits{};
    affine(zp.data(), dm.t, dm.dh, w(inst.params, encoder::head_weight_index(cfg)),
           w(inst.params, encoder::head_bias_index(cfg)), dm.n, logits.data());

    run_layers(inst.params, dm, ex.clean, inst.options.tap_layer, zc);
    norm_rows(zc.data(), dm.t, dm.dh, nullptr, nullptr, encoder::kTapEps);

    double f = 0.0, g = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      const auto& set = quant.sets[l];
      std::array<double, kMaxT * kMaxN> slice{}, soft{}, hard{};
      for (std::size_t r = 0; r < dm.t; ++r) {
        for (std::size_t j = 0; j < N; ++j) slice[r * N + j] = logits[r * dm.n + l * N + j];

        std::array<double, kMaxN> dist{};
        distances(ex.clean.data() + r * dm.din, dm.din, set.anchor.matrix, set.codebook.entries(), dist.data());
        std::size_t best = 0;
        for (std::size_t j = 1; j < N; ++j) {
          if (dist[j] < dist[best]) best = j;
        }
        hard[r * N + best] = 1.0;

        distances(zc.data() + r * dm.dh, dm.dh, set.enhance.matrix, set.codebook.entries(), dist.data());
        double top = -INFINITY;
        for (std::size_t j = 0; j < N; ++j) {
          const double noise = ex.noise.empty() ? 0.0 : ex.noise[l].values(r, j);
          dist[j] = -(dist[j] + noise) / inst.options.tau;
          top = std::max(top, dist[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < N; ++j) total += (dist[j] = std::exp(dist[j] - top));
        for (std::size_t j = 0; j < N; ++j) soft[r * N + j] = dist[j] / total;
      }
      const std::span<const double> lg(slice.data(), dm.t * N);
      f += reference_masked_ce(lg, {soft.data(), dm.t * N}, dm.t, N, ex.mask.masked);
      g += reference_masked_ce(lg, {hard.data(), dm.t * N}, dm.t, N, ex.mask.masked);
    }
    fsum += f / static_cast<double>(L);
    gsum += g / static_cast<double>(L);
  }
  const double b = static_cast<double>(inst.batch.size());
  out.upper_reference = fsum / b;
  out.lower_reference = gsum / b;
  return out;
}

}  // namespace birq::verify

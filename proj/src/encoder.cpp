#include "birq/encoder.hpp"

#include <cmath>
#include <random>

#include "birq/rng.hpp"

namespace birq::encoder {

void validate(const EncoderConfig& cfg) {
  if (cfg.layers < 1 || cfg.layers > 64) throw ConfigError("encoder: layers must be in [1, 64]");
  if (cfg.input_dim < 1 || cfg.hidden_dim < 1 || cfg.ff_dim < 1) {
    throw ConfigError("encoder: dimensions must be positive");
  }
  if (cfg.heads < 1 || cfg.hidden_dim % cfg.heads != 0) {
    throw ConfigError("encoder: hidden_dim must be divisible by heads");
  }
  if (cfg.logits < 2) throw ConfigError("encoder: logit width must be >= 2");
}

std::size_t EncoderParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

std::size_t layer_tensor(std::size_t layer, Slot slot) {
  return 2 + layer * kSlotsPerLayer + static_cast<std::size_t>(slot);
}

std::size_t head_weight_index(const EncoderConfig& cfg) { return 2 + cfg.layers * kSlotsPerLayer; }
std::size_t head_bias_index(const EncoderConfig& cfg) { return head_weight_index(cfg) + 1; }

std::size_t parameter_count(const EncoderConfig& cfg) {
  const std::size_t din = cfg.input_dim, dh = cfg.hidden_dim, dff = cfg.ff_dim, n = cfg.logits;
  const std::size_t block = 4 * dh * dh + dh + 2 * dh * dff + dff + dh + 4 * dh;
  return din * dh + dh + cfg.layers * block + dh * n + n;
}

std::size_t default_k(std::size_t layers) {
  if (layers < 1) throw ParameterError("default_k: K must be >= 1");
  // 0.7 K rounded to nearest in integers, exact ties going down (K = 5 gives 3).
  return std::max<std::size_t>(1, (7 * layers + 4) / 10);
}

EncoderParams init_encoder(const EncoderConfig& cfg) {
  validate(cfg);
  EncoderParams p{cfg, {}};
  rng::Engine eng(rng::derive(cfg.seed, rng::Role::init));
  auto weight = [&](std::string name, std::size_t fan_in, std::size_t fan_out) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    Matrix w(fan_in, fan_out);
    for (double& v : w.values()) v = normal(eng);
    p.tensors.push_back({std::move(name), std::move(w)});
  };
  auto constant = [&](std::string name, std::size_t width, double value) {
    p.tensors.push_back({std::move(name), Matrix(1, width, value)});
  };
  const std::size_t dh = cfg.hidden_dim;
  weight("input.weight", cfg.input_dim, dh);
  constant("input.bias", dh, 0.0);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    weight(pre + "attn.q.weight", dh, dh);
    weight(pre + "attn.k.weight", dh, dh);
    weight(pre + "attn.v.weight", dh, dh);
    weight(pre + "attn.o.weight", dh, dh);
    constant(pre + "attn.o.bias", dh, 0.0);
    constant(pre + "ln1.gain", dh, 1.0);
    constant(pre + "ln1.bias", dh, 0.0);
    weight(pre + "ff1.weight", dh, cfg.ff_dim);
    constant(pre + "ff1.bias", cfg.ff_dim, 0.0);
    weight(pre + "ff2.weight", cfg.ff_dim, dh);
    constant(pre + "ff2.bias", dh, 0.0);
    constant(pre + "ln2.gain", dh, 1.0);
    constant(pre + "ln2.bias", dh, 0.0);
  }
  weight("head.weight", dh, cfg.logits);
  constant("head.bias", cfg.logits, 0.0);
  return p;
}

Matrix position_encoding(std::size_t frames, std::size_t dim) {
  Matrix pe(frames, dim);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) * rate;
      pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

std::vector<ad::Var> bind(ad::Tape& tape, const EncoderParams& params, bool trainable) {
  std::vector<ad::Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    vars.push_back(trainable ? tape.parameter(t.value) : tape.constant(t.value));
  }
  return vars;
}

namespace {

ad::Var linear(ad::Var x, ad::Var w, ad::Var b) { return ad::add_row(ad::matmul(x, w), b); }

ad::Var self_attention(ad::Var z, std::span<const ad::Var> p, std::size_t layer, std::size_t heads) {
  auto at = [&](Slot s) { return p[layer_tensor(layer, s)]; };
  ad::Var q = ad::matmul(z, at(Slot::q_weight));
  ad::Var k = ad::matmul(z, at(Slot::k_weight));
  ad::Var v = ad::matmul(z, at(Slot::v_weight));
  const std::size_t dk = z.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<ad::Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    ad::Var qh = ad::slice_cols(q, h * dk, dk);
    ad::Var kh = ad::slice_cols(k, h * dk, dk);
    ad::Var vh = ad::slice_cols(v, h * dk, dk);
    ad::Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
    outs.push_back(ad::matmul(weights, vh));
  }
  ad::Var merged = heads == 1 ? outs.front() : ad::concat_cols(outs);
  return linear(merged, at(Slot::o_weight), at(Slot::o_bias));
}

}  // namespace

Graph forward(const EncoderConfig& cfg, std::span<const ad::Var> p, ad::Var x, std::size_t max_layer) {
  if (x.cols() != cfg.input_dim) throw ShapeError("encoder forward: input dimension mismatch");
  if (x.rows() < 1) throw ShapeError("encoder forward: need at least one frame");
  if (max_layer < 1 || max_layer > cfg.layers) throw ParameterError("encoder forward: bad max_layer");
  if (p.size() != head_bias_index(cfg) + 1) throw ShapeError("encoder forward: wrong tensor count");
  ad::Tape& tape = x.tape();

  ad::Var z = linear(x, p[kInputWeight], p[kInputBias]);
  if (cfg.position_encoding) z = ad::add(z, tape.constant(position_encoding(x.rows(), cfg.hidden_dim)));

  Graph g;
  for (std::size_t l = 0; l < max_layer; ++l) {
    auto at = [&](Slot s) { return p[layer_tensor(l, s)]; };
    ad::Var a = ad::layer_norm(ad::add(z, self_attention(z, p, l, cfg.heads)), at(Slot::ln1_gain),
                               at(Slot::ln1_bias), kLayerNormEps);
    ad::Var ff = linear(ad::gelu(linear(a, at(Slot::ff1_weight), at(Slot::ff1_bias))),
                        at(Slot::ff2_weight), at(Slot::ff2_bias));
    z = ad::layer_norm(ad::add(a, ff), at(Slot::ln2_gain), at(Slot::ln2_bias), kLayerNormEps);
    g.layers.push_back(z);
  }
  if (max_layer == cfg.layers) {
    g.logits = linear(z, p[head_weight_index(cfg)], p[head_bias_index(cfg)]);
  }
  return g;
}

ad::Var tap(const Graph& g, std::size_t k) {
  if (k < 1 || k > g.layers.size()) throw ParameterError("tap: layer index out of range");
  return ad::standardize_rows(g.layers[k - 1], kTapEps);
}

ForwardTrace forward(const EncoderParams& params, const Matrix& x) {
  ad::Tape tape;
  auto vars = bind(tape, params, false);
  Graph g = forward(params.config, vars, tape.constant(x), params.config.layers);
  ForwardTrace trace;
  for (const auto& z : g.layers) {
    if (!all_finite(z.value())) throw NumericError("encoder forward: non-finite activation");
    trace.layers.push_back(z.value());
  }
  trace.logits = g.logits.value();
  if (!all_finite(trace.logits)) throw NumericError("encoder forward: non-finite logits");
  return trace;
}

Matrix tap(const ForwardTrace& trace, std::size_t k) {
  if (k < 1 || k > trace.layers.size()) throw ParameterError("tap: layer index out of range");
  ad::Tape tape;
  return ad::standardize_rows(tape.constant(trace.layers[k - 1]), kTapEps).value();
}

}  // namespace birq::encoder

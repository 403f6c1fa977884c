#include <doctest.h>

#include <cmath>

#include "birq/encoder.hpp"
#include "helpers.hpp"

using namespace birq;
using namespace birq::encoder;

namespace {

EncoderConfig tiny(bool pe = true) {
  EncoderConfig c;
  c.layers = 2;
  c.input_dim = 5;
  c.hidden_dim = 8;
  c.heads = 2;
  c.ff_dim = 16;
  c.logits = 4;
  c.position_encoding = pe;
  c.seed = 3;
  return c;
}

// Gains and biases away from their initial values, so no tensor sits at a
// symmetric point.
EncoderParams jittered(const EncoderConfig& c) {
  auto p = init_encoder(c);
  std::uint64_t s = 500;
  for (auto& t : p.tensors) {
    if (t.value.rows() == 1) {
      const Matrix j = test::random_matrix(1, t.value.cols(), s++, 0.2);
      for (std::size_t i = 0; i < t.value.size(); ++i) t.value.data()[i] += j.data()[i];
    }
  }
  return p;
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("default_k rule of thumb") {
    CHECK(default_k(5) == 3);
    CHECK(default_k(10) == 7);
    CHECK(default_k(1) == 1);
    CHECK(default_k(2) == 1);
    CHECK_THROWS_AS((void)default_k(0), ParameterError);
  }

  TEST_CASE("parameter count: closed form equals the sum over tensors") {
    EncoderConfig c;
    c.layers = 5;
    c.hidden_dim = 64;
    c.heads = 4;
    c.ff_dim = 128;
    c.logits = 16;
    c.input_dim = 160;
    const auto p = init_encoder(c);
    std::size_t summed = 0;
    for (const auto& t : p.tensors) summed += t.value.size();
    CHECK(summed == parameter_count(c));
    CHECK(parameter_count(c) == 177744);
    CHECK(p.scalar_count() == summed);
  }

  TEST_CASE("init is seeded, scaled and names every tensor") {
    const auto c = tiny();
    const auto a = init_encoder(c), b = init_encoder(c);
    REQUIRE(a.tensors.size() == b.tensors.size());
    for (std::size_t i = 0; i < a.tensors.size(); ++i) CHECK(a.tensors[i].value == b.tensors[i].value);
    CHECK(a.tensors[layer_tensor(1, Slot::ln2_gain)].name == "layers.1.ln2.gain");
    CHECK(a.tensors[head_bias_index(c)].name == "head.bias");
    for (double v : a.tensors[layer_tensor(0, Slot::ln1_gain)].value.values()) CHECK(v == 1.0);
    for (double v : a.tensors[layer_tensor(0, Slot::ff1_bias)].value.values()) CHECK(v == 0.0);

    EncoderConfig big = c;
    big.hidden_dim = 256;
    big.ff_dim = 512;
    const auto w = init_encoder(big).tensors[layer_tensor(0, Slot::ff1_weight)].value;
    double var = 0;
    for (double v : w.values()) var += v * v;
    var /= static_cast<double>(w.size());
    CHECK(var == doctest::Approx(1.0 / 256).epsilon(0.05));
  }

  TEST_CASE("config validation") {
    auto c = tiny();
    c.heads = 3;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = tiny();
    c.layers = 0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = tiny();
    c.logits = 1;
    CHECK_THROWS_AS(validate(c), ConfigError);
  }

  TEST_CASE("forward shapes, determinism and errors") {
    const auto c = tiny();
    const auto p = init_encoder(c);
    const Matrix x = test::random_matrix(6, 5, 1);
    const auto tr = forward(p, x);
    REQUIRE(tr.layers.size() == 2);
    CHECK(tr.layers[0].rows() == 6);
    CHECK(tr.layers[0].cols() == 8);
    CHECK(tr.logits.rows() == 6);
    CHECK(tr.logits.cols() == 4);
    CHECK(forward(p, x).logits == tr.logits);
    CHECK_THROWS_AS((void)forward(p, test::random_matrix(6, 4, 1)), ShapeError);
    CHECK_THROWS_AS((void)tap(tr, 0), ParameterError);
    CHECK_THROWS_AS((void)tap(tr, 3), ParameterError);
  }

  TEST_CASE("single frame and minimal config stay finite") {
    auto c = tiny();
    c.layers = 1;
    const auto p = init_encoder(c);
    const auto tr = forward(p, test::random_matrix(1, 5, 2));
    CHECK(all_finite(tr.logits));
    CHECK(all_finite(forward(p, test::random_matrix(9, 5, 2)).logits));
  }

  TEST_CASE("frames permute with the logits when positions are off") {
    const auto p = jittered(tiny(false));
    const Matrix x = test::random_matrix(3, 5, 4);
    Matrix perm(3, 5);
    const std::size_t order[] = {2, 0, 1};
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t j = 0; j < 5; ++j) perm(t, j) = x(order[t], j);
    }
    const Matrix a = forward(p, x).logits, b = forward(p, perm).logits;
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t j = 0; j < 4; ++j) CHECK(b(t, j) == doctest::Approx(a(order[t], j)).epsilon(1e-12));
    }
    // With positions on, the same permutation is no longer an equivariance.
    const auto q = jittered(tiny(true));
    const Matrix c = forward(q, x).logits, d = forward(q, perm).logits;
    double gap = 0;
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t j = 0; j < 4; ++j) gap = std::max(gap, std::abs(d(t, j) - c(order[t], j)));
    }
    CHECK(gap > 1e-6);
  }

  TEST_CASE("outputs respond to the input") {
    const auto p = init_encoder(tiny());
    Matrix x = test::random_matrix(4, 5, 6);
    const Matrix a = forward(p, x).logits;
    for (double& v : x.values()) v *= 2.0;
    CHECK(max_abs_diff(forward(p, x).logits, a) > 0.0);
  }

  TEST_CASE("tap frames are standardized") {
    const auto p = jittered(tiny());
    const auto tr = forward(p, test::random_matrix(7, 5, 8));
    for (std::size_t k = 1; k <= 2; ++k) {
      const Matrix z = tap(tr, k);
      for (std::size_t t = 0; t < z.rows(); ++t) {
        double mean = 0, var = 0;
        for (double v : z.row(t)) mean += v;
        mean /= 8;
        for (double v : z.row(t)) var += (v - mean) * (v - mean);
        CHECK(std::abs(mean) <= 1e-6);
        CHECK(std::abs(std::sqrt(var / 8) - 1.0) <= 1e-6);
      }
    }
  }

  TEST_CASE("logit gradients match central differences for every tensor") {
    const auto c = tiny();
    auto p = jittered(c);
    const Matrix x = test::random_matrix(4, 5, 9);
    const Matrix w = test::random_matrix(4, 4, 10);
    auto scalar = [&](ad::Tape& t, std::span<const ad::Var> vars) {
      const auto g = forward(c, vars, t.constant(x), c.layers);
      return ad::masked_cross_entropy(g.logits, t.constant(w), std::vector<std::size_t>{0, 1, 2, 3});
    };
    ad::Tape tape;
    const auto vars = bind(tape, p, true);
    tape.backward(scalar(tape, vars));
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
      const Matrix numeric = test::numeric_grad(
          [&](const Matrix& m) {
            auto q = p;
            q.tensors[i].value = m;
            ad::Tape t;
            return scalar(t, bind(t, q, false)).value()(0, 0);
          },
          p.tensors[i].value);
      CAPTURE(p.tensors[i].name);
      CHECK(test::max_rel_error(tape.grad(vars[i]), numeric) <= 1e-4);
    }
  }

  TEST_CASE("gradient reaches layer 1 through the tap") {
    const auto c = tiny();
    const auto p = jittered(c);
    ad::Tape tape;
    const auto vars = bind(tape, p, true);
    const auto g = forward(c, vars, tape.constant(test::random_matrix(5, 5, 11)), 1);
    ad::Var z = tap(g, 1);
    ad::Var probe = ad::matmul(z, tape.constant(test::random_matrix(8, 1, 12)));
    tape.backward(ad::sum(ad::matmul_nt(ad::scale(probe, 1.0), probe)));
    double biggest = 0;
    const Matrix g1 = tape.grad(vars[layer_tensor(0, Slot::ff1_weight)]);
    for (double v : g1.values()) biggest = std::max(biggest, std::abs(v));
    CHECK(biggest > 1e-12);
    // Nothing past layer 1 was touched.
    const Matrix g2 = tape.grad(vars[layer_tensor(1, Slot::q_weight)]);
    for (double v : g2.values()) CHECK(v == 0.0);
  }
}

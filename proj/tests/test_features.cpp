#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "birq/binary_io.hpp"
#include "birq/features.hpp"
#include "helpers.hpp"

using namespace birq;
using namespace birq::features;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "birq_test_features";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Waveform tone(double hz, std::size_t n) {
  Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / 16000.0);
  return w;
}

void write_wav16(const std::filesystem::path& p, const std::vector<std::int16_t>& pcm, std::uint32_t rate) {
  std::ofstream os(p, std::ios::binary);
  io::write_magic(os, "RIFF");
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(36 + 2 * pcm.size()));
  io::write_magic(os, "WAVE");
  io::write_magic(os, "fmt ");
  io::write_le<std::uint32_t>(os, 16);
  io::write_le<std::uint16_t>(os, 1);
  io::write_le<std::uint16_t>(os, 1);
  io::write_le<std::uint32_t>(os, rate);
  io::write_le<std::uint32_t>(os, rate * 2);
  io::write_le<std::uint16_t>(os, 2);
  io::write_le<std::uint16_t>(os, 16);
  io::write_magic(os, "data");
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(2 * pcm.size()));
  for (auto s : pcm) io::write_le<std::int16_t>(os, s);
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("one second of audio gives 98 frames of 80 mels") {
    const auto f = compute_logmel(tone(440.0, 16000));
    CHECK(f.frames() == 1 + (16000 - 400) / 160);
    CHECK(f.frames() == 98);
    CHECK(f.dim() == 80);
    CHECK_FALSE(f.normalized);
    for (double v : f.data.values()) {
      CHECK(std::isfinite(v));
      CHECK(v >= std::log(kLogFloor) - 1e-12);
    }
  }

  TEST_CASE("silence maps to the log floor everywhere") {
    Waveform w;
    w.samples.assign(4000, 0.0);
    const auto f = compute_logmel(w);
    for (double v : f.data.values()) CHECK(v == std::log(kLogFloor));
  }

  TEST_CASE("a 1 kHz tone peaks in the mel band centred nearest 1 kHz") {
    const auto f = compute_logmel(tone(1000.0, 16000));
    // Independent oracle: direct DFT of one frame and HTK triangles built here.
    auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    std::vector<double> edges(82);
    for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = hz(mel(8000.0) * static_cast<double>(i) / 81.0);
    std::size_t nearest = 0;
    for (std::size_t m = 0; m < 80; ++m) {
      if (std::abs(edges[m + 1] - 1000.0) < std::abs(edges[nearest + 1] - 1000.0)) nearest = m;
    }
    std::vector<double> energy(80, 0.0);
    const auto w = tone(1000.0, 400).samples;
    for (std::size_t k = 0; k <= 256; ++k) {
      double re = 0, im = 0;
      for (std::size_t n = 0; n < 400; ++n) {
        const double win = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(n) / 399.0);
        re += w[n] * win * std::cos(2 * std::numbers::pi * static_cast<double>(k * n) / 512.0);
        im -= w[n] * win * std::sin(2 * std::numbers::pi * static_cast<double>(k * n) / 512.0);
      }
      const double fk = static_cast<double>(k) * 16000.0 / 512.0;
      for (std::size_t m = 0; m < 80; ++m) {
        const double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
        const double tri = fk <= lo || fk >= hi ? 0.0 : (fk <= c ? (fk - lo) / (c - lo) : (hi - fk) / (hi - c));
        energy[m] += tri * (re * re + im * im);
      }
    }
    const auto oracle_peak =
        static_cast<std::size_t>(std::max_element(energy.begin(), energy.end()) - energy.begin());
    std::vector<double> mean(80, 0.0);
    for (std::size_t t = 0; t < f.frames(); ++t) {
      for (std::size_t m = 0; m < 80; ++m) mean[m] += f.data(t, m);
    }
    const auto peak = static_cast<std::size_t>(std::max_element(mean.begin(), mean.end()) - mean.begin());
    CHECK(peak == nearest);
    CHECK(oracle_peak == nearest);
    CHECK(f.data(0, nearest) == doctest::Approx(std::log(energy[nearest] + kLogFloor)).epsilon(1e-9));
    CHECK(std::abs(mel_centers_hz()[nearest] - 1000.0) < 60.0);
  }

  TEST_CASE("logmel input checks") {
    Waveform w;
    w.samples.assign(399, 0.0);
    CHECK_THROWS_AS((void)compute_logmel(w), LengthError);
    w.samples.assign(400, 0.0);
    w.samples[3] = std::nan("");
    CHECK_THROWS_AS((void)compute_logmel(w), InputError);
  }

  TEST_CASE("mel scale and Hann window") {
    CHECK(mel_to_hz(hz_to_mel(1234.5)) == doctest::Approx(1234.5));
    CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
    const auto& w = hann_window();
    CHECK(w.size() == 400);
    CHECK(w.front() == doctest::Approx(0.0));
    CHECK(w.back() == doctest::Approx(0.0));
    CHECK(w[100] == doctest::Approx(w[299]));
  }

  TEST_CASE("stack_frames shapes and ordering") {
    FeatureSequence f;
    f.data = test::random_matrix(98, 80, 1);
    const auto s = stack_frames(f, 2);
    CHECK(s.frames() == 49);
    CHECK(s.dim() == 160);
    CHECK(s.data(3, 80 + 7) == f.data(7, 7));
    CHECK(stack_frames(f, 1).data == f.data);
    f.data = test::random_matrix(5, 3, 2);
    const auto r = stack_frames(f, 2);
    CHECK(r.frames() == 2);
    for (std::size_t i = 0; i < r.data.size(); ++i) CHECK(r.data.data()[i] == f.data.data()[i]);
    CHECK_THROWS_AS((void)stack_frames(f, 0), ParameterError);
  }

  TEST_CASE("normalize examples and invariants") {
    FeatureSequence f;
    f.data = Matrix{{-1.0, 5.0}, {1.0, 5.0}};
    const auto n = normalize(f);
    CHECK(n.normalized);
    CHECK(n.data == Matrix{{-1.0, 0.0}, {1.0, 0.0}});

    f.data = test::random_matrix(50, 7, 3, 3.0);
    for (std::size_t t = 0; t < 50; ++t) f.data(t, 2) += 100.0;
    const auto g = normalize(f);
    for (std::size_t j = 0; j < 7; ++j) {
      double mean = 0, var = 0;
      for (std::size_t t = 0; t < 50; ++t) mean += g.data(t, j);
      mean /= 50;
      for (std::size_t t = 0; t < 50; ++t) var += (g.data(t, j) - mean) * (g.data(t, j) - mean);
      CHECK(std::abs(mean) <= 1e-6);
      CHECK(std::abs(std::sqrt(var / 50) - 1.0) <= 1e-6);
    }
    CHECK(max_abs_diff(normalize(g).data, g.data) <= 1e-6);

    f.data = Matrix{{1.0, 2.0}};
    CHECK_THROWS_AS((void)normalize(f), LengthError);
  }

  TEST_CASE("synthetic corpus is deterministic and clustered") {
    SynthSpec spec;
    spec.num_sequences = 3;
    spec.seed = 11;
    const auto a = synth_dataset(spec), b = synth_dataset(spec);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(a[i].data == b[i].data);
      CHECK(a[i].frames() == spec.frames);
      CHECK(a[i].dim() == spec.dim);
    }
    spec.cluster_spread = 0.0;
    const auto c = synth_corpus(spec);
    for (std::size_t i = 0; i < c.sequences.size(); ++i) {
      for (std::size_t t = 0; t < spec.frames; ++t) {
        const auto row = c.sequences[i].data.row(t);
        const auto centroid = c.centroids.row(c.clusters[i][t]);
        CHECK(std::equal(row.begin(), row.end(), centroid.begin()));
      }
    }
  }

  TEST_CASE("cluster frequencies approach the chain's stationary distribution") {
    SynthSpec spec;
    spec.num_sequences = 1000;
    spec.frames = 100;
    spec.dim = 2;
    spec.seed = 5;
    const auto c = synth_corpus(spec);
    // Stay with 0.8, else uniform over the other three: the chain is doubly
    // stochastic, so the stationary law is uniform.
    std::vector<double> freq(4, 0.0);
    double total = 0;
    for (const auto& seq : c.clusters) {
      for (auto id : seq) {
        freq[id] += 1;
        total += 1;
      }
    }
    CHECK(total >= 1e5);
    for (double f : freq) CHECK(std::abs(f / total - 0.25) <= 0.05);
    // Run lengths reflect the self-transition probability: mean 1 / (1 - 0.8).
    double runs = 0, changes = 0;
    for (const auto& seq : c.clusters) {
      runs += 1;
      for (std::size_t t = 1; t < seq.size(); ++t) changes += seq[t] != seq[t - 1];
    }
    CHECK(changes / (total - runs) == doctest::Approx(1.0 - kSelfTransition).epsilon(0.05));
  }

  TEST_CASE("FEATS round trip and corruption") {
    FeatureSequence f;
    f.data = test::random_matrix(6, 4, 8);
    for (double& v : f.data.values()) v = static_cast<float>(v);
    const auto p = temp_path("rt.feats");
    save_features(f, p);
    CHECK(load_features(p).data == f.data);

    std::string bytes;
    {
      std::ifstream is(p, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(is), {});
    }
    auto write = [&](const std::string& b) {
      std::ofstream os(p, std::ios::binary | std::ios::trunc);
      os << b;
    };
    write(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS((void)load_features(p), FormatError);
    auto bad = bytes;
    bad[0] = 'X';
    write(bad);
    CHECK_THROWS_AS((void)load_features(p), FormatError);
    bad = bytes;
    bad[8] = 2;  // version
    write(bad);
    CHECK_THROWS_AS((void)load_features(p), FormatError);
    bad = bytes;
    std::fill(bad.begin() + 20, bad.begin() + 28, '\0');  // d = 0
    write(bad);
    CHECK_THROWS_AS((void)load_features(p), FormatError);
    write(bytes + "x");
    CHECK_THROWS_AS((void)load_features(p), FormatError);
    CHECK_THROWS_AS((void)load_features(temp_path("missing.feats")), IoError);
  }

  TEST_CASE("16-bit PCM WAV reading") {
    const auto p = temp_path("tone.wav");
    write_wav16(p, {0, 16384, -32768, 32767}, 16000);
    const auto w = read_wav(p);
    REQUIRE(w.samples.size() == 4);
    CHECK(w.samples[1] == doctest::Approx(0.5));
    CHECK(w.samples[2] == doctest::Approx(-1.0));
    write_wav16(p, {0, 1}, 8000);
    CHECK_THROWS_AS((void)read_wav(p), InputError);
  }
}

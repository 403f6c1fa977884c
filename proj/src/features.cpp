#include "birq/features.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "birq/binary_io.hpp"
#include "birq/kernels.hpp"
#include "birq/rng.hpp"

namespace birq::features {

double hz_to_mel(double hz) noexcept { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) noexcept { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges_hz() {
  const double lo = hz_to_mel(0.0);
  const double hi = hz_to_mel(kSampleRate / 2.0);
  std::vector<double> edges(kNumMels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kNumMels + 1));
  }
  return edges;
}

Matrix build_filterbank() {
  const auto edges = mel_edges_hz();
  const std::size_t bins = kFftSize / 2 + 1;
  Matrix fb(bins, kNumMels);
  for (std::size_t k = 0; k < bins; ++k) {
    const double f = static_cast<double>(k) * kSampleRate / static_cast<double>(kFftSize);
    for (std::size_t m = 0; m < kNumMels; ++m) {
      const double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
      double w = 0.0;
      if (f >= lo && f <= c) {
        w = (f - lo) / (c - lo);
      } else if (f > c && f <= hi) {
        w = (hi - f) / (hi - c);
      }
      fb(k, m) = w;
    }
  }
  return fb;
}

}  // namespace

const Matrix& mel_filterbank() {
  static const Matrix fb = build_filterbank();
  return fb;
}

std::vector<double> mel_centers_hz() {
  auto edges = mel_edges_hz();
  return {edges.begin() + 1, edges.end() - 1};
}

const std::vector<double>& hann_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kWindowSamples);
    for (std::size_t n = 0; n < v.size(); ++n) {
      v[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                  static_cast<double>(kWindowSamples - 1));
    }
    return v;
  }();
  return w;
}

FeatureSequence compute_logmel(const Waveform& w) {
  if (w.sample_rate != kSampleRate) throw InputError("compute_logmel: sample rate must be 16000 Hz");
  if (w.samples.size() < kWindowSamples) {
    throw LengthError("compute_logmel: waveform shorter than one 400-sample window");
  }
  for (double s : w.samples) {
    if (!std::isfinite(s)) throw InputError("compute_logmel: non-finite sample");
  }
  FeatureSequence out;
  out.data = kernels::logmel_frames(w.samples, kWindowSamples, kHopSamples, kFftSize, hann_window(),
                                    mel_filterbank(), kLogFloor);
  out.frame_shift = static_cast<double>(kHopSamples) / kSampleRate;
  out.normalized = false;
  return out;
}

FeatureSequence stack_frames(const FeatureSequence& f, std::size_t factor) {
  if (factor == 0) throw ParameterError("stack_frames: factor must be >= 1");
  const std::size_t rows = f.frames() / factor;
  const std::size_t d = f.dim();
  // Row-major layout makes stacking a truncating reshape.
  std::vector<double> data(f.data.data(), f.data.data() + rows * factor * d);
  FeatureSequence out;
  out.data = Matrix(rows, d * factor, std::move(data));
  out.frame_shift = f.frame_shift * static_cast<double>(factor);
  out.normalized = false;
  return out;
}

FeatureSequence normalize(const FeatureSequence& f) {
  const std::size_t T = f.frames();
  if (T < 2) throw LengthError("normalize: need at least two frames");
  FeatureSequence out = f;
  for (std::size_t j = 0; j < f.dim(); ++j) {
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t) mean += f.data(t, j);
    mean /= static_cast<double>(T);
    double var = 0.0;
    for (std::size_t t = 0; t < T; ++t) var += (f.data(t, j) - mean) * (f.data(t, j) - mean);
    var /= static_cast<double>(T);
    const double sd = std::sqrt(var);
    // Rounding in the mean of a constant column leaves a residue around 1e-16|mean|.
    if (sd <= 1e-10 * std::max(1.0, std::abs(mean))) {
      for (std::size_t t = 0; t < T; ++t) out.data(t, j) = 0.0;
      continue;
    }
    for (std::size_t t = 0; t < T; ++t) out.data(t, j) = (f.data(t, j) - mean) / sd;
  }
  out.normalized = true;
  return out;
}

SynthCorpus synth_corpus(const SynthSpec& spec) {
  if (spec.num_clusters < 2) throw ParameterError("synth_dataset: num_clusters must be >= 2");
  if (!(spec.cluster_spread >= 0.0)) throw ParameterError("synth_dataset: cluster_spread must be >= 0");
  if (spec.frames == 0 || spec.dim == 0) throw ParameterError("synth_dataset: empty frame shape");

  SynthCorpus corpus;
  corpus.centroids = Matrix(spec.num_clusters, spec.dim);
  {
    rng::Engine eng(rng::derive(spec.seed, rng::Role::centroids));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : corpus.centroids.values()) v = normal(eng);
  }

  const auto K = static_cast<std::uint32_t>(spec.num_clusters);
  for (std::size_t i = 0; i < spec.num_sequences; ++i) {
    rng::Engine chain(rng::derive(spec.seed, rng::Role::chain, 0, 0, i));
    rng::Engine noise(rng::derive(spec.seed, rng::Role::data, 0, 0, i));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<std::uint32_t> pick(0, K - 1);
    std::uniform_int_distribution<std::uint32_t> other(0, K - 2);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<std::uint32_t> states(spec.frames);
    std::uint32_t s = pick(chain);
    for (std::size_t t = 0; t < spec.frames; ++t) {
      if (t > 0 && unif(chain) >= kSelfTransition) {
        const std::uint32_t o = other(chain);
        s = o >= s ? o + 1 : o;
      }
      states[t] = s;
    }

    FeatureSequence seq;
    seq.data = Matrix(spec.frames, spec.dim);
    for (std::size_t t = 0; t < spec.frames; ++t) {
      auto c = corpus.centroids.row(states[t]);
      auto r = seq.data.row(t);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        r[j] = spec.cluster_spread == 0.0 ? c[j] : c[j] + spec.cluster_spread * normal(noise);
      }
    }
    corpus.sequences.push_back(std::move(seq));
    corpus.clusters.push_back(std::move(states));
  }
  return corpus;
}

std::vector<FeatureSequence> synth_dataset(const SynthSpec& spec) {
  return synth_corpus(spec).sequences;
}

namespace {
constexpr std::string_view kFeatMagic = "BIRQFEAT";
constexpr std::uint32_t kFeatVersion = 1;
}  // namespace

void save_features(const FeatureSequence& f, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  io::write_magic(os, kFeatMagic);
  io::write_le<std::uint32_t>(os, kFeatVersion);
  io::write_le<std::uint64_t>(os, f.frames());
  io::write_le<std::uint64_t>(os, f.dim());
  for (double v : f.data.values()) io::write_le<float>(os, static_cast<float>(v));
  if (!os) throw IoError("write failed: " + path.string());
}

FeatureSequence load_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  io::expect_magic(is, kFeatMagic);
  if (io::read_le<std::uint32_t>(is, "FEATS version") != kFeatVersion) {
    throw FormatError("unsupported FEATS version in " + path.string());
  }
  const auto T = io::read_le<std::uint64_t>(is, "FEATS T");
  const auto d = io::read_le<std::uint64_t>(is, "FEATS d");
  if (T == 0 || d == 0) throw FormatError("FEATS header has zero dimension in " + path.string());
  if (T > (1ULL << 32) || d > (1ULL << 20)) throw FormatError("FEATS header shape implausible");
  FeatureSequence f;
  f.data = Matrix(T, d);
  for (double& v : f.data.values()) v = io::read_le<float>(is, "FEATS payload");
  io::expect_eof(is, "FEATS payload");
  for (double v : f.data.values()) {
    if (!std::isfinite(v)) throw FormatError("FEATS payload contains non-finite values");
  }
  return f;
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  io::expect_magic(is, "RIFF");
  (void)io::read_le<std::uint32_t>(is, "RIFF size");
  io::expect_magic(is, "WAVE");
  bool have_fmt = false;
  Waveform w;
  while (true) {
    std::string id(4, '\0');
    if (!is.read(id.data(), 4)) throw FormatError("WAV without data chunk: " + path.string());
    const auto size = io::read_le<std::uint32_t>(is, "chunk size");
    if (id == "fmt ") {
      const auto format = io::read_le<std::uint16_t>(is, "wav format");
      const auto channels = io::read_le<std::uint16_t>(is, "wav channels");
      w.sample_rate = io::read_le<std::uint32_t>(is, "wav rate");
      (void)io::read_le<std::uint32_t>(is, "wav byte rate");
      (void)io::read_le<std::uint16_t>(is, "wav align");
      const auto bits = io::read_le<std::uint16_t>(is, "wav bits");
      if (format != 1 || channels != 1 || bits != 16) {
        throw FormatError("only 16-bit PCM mono WAV is supported: " + path.string());
      }
      is.ignore(size - 16 + (size & 1));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("WAV data chunk before fmt chunk: " + path.string());
      w.samples.resize(size / 2);
      for (double& s : w.samples) s = io::read_le<std::int16_t>(is, "wav samples") / 32768.0;
      break;
    } else {
      is.ignore(size + (size & 1));
    }
  }
  if (w.sample_rate != kSampleRate) throw InputError("WAV must be 16 kHz: " + path.string());
  return w;
}

}  // namespace birq::features

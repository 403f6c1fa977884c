#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "birq/matrix.hpp"

namespace birq::features {

inline constexpr std::uint32_t kSampleRate = 16000;
inline constexpr std::size_t kWindowSamples = 400;  // 25 ms
inline constexpr std::size_t kHopSamples = 160;     // 10 ms
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kNumMels = 80;
inline constexpr double kLogFloor = 1e-10;

struct Waveform {
  std::vector<double> samples;
  std::uint32_t sample_rate = kSampleRate;
};

/// Frames x dims feature matrix plus the metadata the pipeline tracks.
struct FeatureSequence {
  Matrix data;
  double frame_shift = 0.01;  // seconds
  bool normalized = false;

  [[nodiscard]] std::size_t frames() const noexcept { return data.rows(); }
  [[nodiscard]] std::size_t dim() const noexcept { return data.cols(); }
};

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t num_sequences = 64;
  std::size_t frames = 100;
  std::size_t dim = 40;
  std::size_t num_clusters = 4;
  double cluster_spread = 0.05;
};

/// Probability that the synthetic cluster chain stays in its current state.
inline constexpr double kSelfTransition = 0.8;

/// HTK mel scale.
[[nodiscard]] double hz_to_mel(double hz) noexcept;
[[nodiscard]] double mel_to_hz(double mel) noexcept;

/// (kFftSize/2+1) x kNumMels triangular filter weights over 0..8 kHz.
[[nodiscard]] const Matrix& mel_filterbank();
/// Center frequency (Hz) of each mel filter.
[[nodiscard]] std::vector<double> mel_centers_hz();
/// Symmetric Hann window of kWindowSamples points.
[[nodiscard]] const std::vector<double>& hann_window();

/// 80-dim log-mel energies, 25 ms window, 10 ms shift. Not normalized.
[[nodiscard]] FeatureSequence compute_logmel(const Waveform& w);

/// Concatenates every `factor` consecutive frames; trailing remainder dropped.
[[nodiscard]] FeatureSequence stack_frames(const FeatureSequence& f, std::size_t factor);

/// Per-dimension standardization over the sequence (population std).
/// Constant dimensions become exactly zero.
[[nodiscard]] FeatureSequence normalize(const FeatureSequence& f);

/// Seeded corpus with planted cluster structure and Markov-chained labels.
[[nodiscard]] std::vector<FeatureSequence> synth_dataset(const SynthSpec& spec);

/// Same as synth_dataset but also returns the per-frame cluster ids.
struct SynthCorpus {
  std::vector<FeatureSequence> sequences;
  std::vector<std::vector<std::uint32_t>> clusters;
  Matrix centroids;
};
[[nodiscard]] SynthCorpus synth_corpus(const SynthSpec& spec);

/// FEATS container: "BIRQFEAT", u32 version=1, u64 T, u64 d, T*d f32, all LE.
void save_features(const FeatureSequence& f, const std::filesystem::path& path);
[[nodiscard]] FeatureSequence load_features(const std::filesystem::path& path);

/// 16-bit PCM mono RIFF/WAVE at 16 kHz.
[[nodiscard]] Waveform read_wav(const std::filesystem::path& path);

}  // namespace birq::features

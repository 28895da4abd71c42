// SPDX-License-Identifier: Apache-2.0
//
// Log-mel spectrogram (LMS) features: WAV ingestion, framing, mel filterbank,
// global standardization and the binary LMSF / LMST file formats.
//
// Reference configuration: 16 kHz mono, 40 ms Hann window, 20 ms hop,
// FFT size = next power of two >= window, 64 HTK-mel triangular filters from
// 0 Hz to Nyquist, log energies floored at 1e-10.
#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <span>
#include <vector>

namespace acap::dsp {

inline constexpr double kEnergyFloor = 1e-10;
inline constexpr double kStdFloor = 1e-5;

struct AudioClip {
  std::vector<float> samples;  ///< mono amplitudes in [-1, 1]
  int sample_rate = 16000;

  /// Throws InvalidParam unless samples are non-empty and the rate is >= 8000.
  void validate() const;
};

using FrameMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// T x D matrix, one row per analysis frame.
struct FeatureMatrix {
  FrameMatrix frames;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
  friend bool operator==(const FeatureMatrix& a, const FeatureMatrix& b) {
    return a.frames.rows() == b.frames.rows() && a.frames.cols() == b.frames.cols() &&
           a.frames == b.frames;
  }
};

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;  ///< every entry >= kStdFloor

  Eigen::Index dim() const { return mean.size(); }
};

struct LmsOptions {
  double window_ms = 40.0;
  double hop_ms = 20.0;
  int n_mels = 64;
};

/// Window and hop lengths in samples for the given rate.
std::pair<std::size_t, std::size_t> frame_lengths(const LmsOptions& opt, int sample_rate);

/// 1 + floor((n_samples - window_len) / hop_len), or 0 if the clip is shorter
/// than one window.
std::size_t frame_count(std::size_t n_samples, std::size_t window_len, std::size_t hop_len);

/// HTK mel filterbank, n_mels x (n_fft/2 + 1), unnormalized triangles.
Eigen::MatrixXd mel_filterbank(int n_mels, std::size_t n_fft, int sample_rate);

FeatureMatrix extract_lms(const AudioClip& clip, const LmsOptions& opt = {});

/// Per-dimension mean and population std over every frame of every matrix.
FeatureStats compute_stats(std::span<const FeatureMatrix> features);

FeatureMatrix standardize(const FeatureMatrix& f, const FeatureStats& stats);

// 16-bit PCM WAV. Multi-channel input is averaged to mono.
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

// LMSF: "LMSF", u32 version=1, u32 T, u32 D, T*D float32 row-major.
void write_features(const FeatureMatrix& f, const std::filesystem::path& path);
FeatureMatrix read_features(const std::filesystem::path& path);
std::vector<char> encode_features(const FeatureMatrix& f);
FeatureMatrix decode_features(std::span<const char> bytes);

// LMST: "LMST", u32 version=1, u32 D, D float32 means, D float32 stds.
void write_stats(const FeatureStats& s, const std::filesystem::path& path);
FeatureStats read_stats(const std::filesystem::path& path);

}  // namespace acap::dsp

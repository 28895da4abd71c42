// SPDX-License-Identifier: Apache-2.0
#include "acap/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

#include "acap/binary_io.hpp"
#include "acap/error.hpp"

namespace acap::dsp {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// FFTW planning mutates global state; execution on distinct buffers does not.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(p);
  }
};

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

void AudioClip::validate() const {
  if (samples.empty()) fail(ErrorKind::InvalidParam, "audio clip has no samples");
  if (sample_rate < 8000) {
    fail(ErrorKind::InvalidParam, "sample rate " + std::to_string(sample_rate) + " < 8000");
  }
}

std::pair<std::size_t, std::size_t> frame_lengths(const LmsOptions& opt, int sample_rate) {
  if (!(opt.window_ms > 0) || !(opt.hop_ms > 0) || opt.n_mels <= 0) {
    fail(ErrorKind::InvalidParam, "window, hop and n_mels must be positive");
  }
  if (opt.window_ms < opt.hop_ms) fail(ErrorKind::InvalidParam, "window shorter than hop");
  const auto win = static_cast<std::size_t>(std::llround(opt.window_ms * sample_rate / 1000.0));
  const auto hop = static_cast<std::size_t>(std::llround(opt.hop_ms * sample_rate / 1000.0));
  if (win == 0 || hop == 0) fail(ErrorKind::InvalidParam, "window or hop rounds to 0 samples");
  return {win, hop};
}

std::size_t frame_count(std::size_t n_samples, std::size_t window_len, std::size_t hop_len) {
  if (n_samples < window_len) return 0;
  return 1 + (n_samples - window_len) / hop_len;
}

Eigen::MatrixXd mel_filterbank(int n_mels, std::size_t n_fft, int sample_rate) {
  const std::size_t n_bins = n_fft / 2 + 1;
  const double nyquist = sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);

  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, static_cast<Eigen::Index>(n_bins));
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], centre = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f > lo && f <= centre) {
        w = (f - lo) / (centre - lo);
      } else if (f > centre && f < hi) {
        w = (hi - f) / (hi - centre);
      }
      fb(m, static_cast<Eigen::Index>(k)) = w;
    }
  }
  return fb;
}

FeatureMatrix extract_lms(const AudioClip& clip, const LmsOptions& opt) {
  clip.validate();
  const auto [win, hop] = frame_lengths(opt, clip.sample_rate);
  const std::size_t n_frames = frame_count(clip.samples.size(), win, hop);
  if (n_frames == 0) {
    fail(ErrorKind::ClipTooShort, std::to_string(clip.samples.size()) +
                                      " samples, window needs " + std::to_string(win));
  }

  const std::size_t n_fft = next_pow2(win);
  const std::size_t n_bins = n_fft / 2 + 1;
  const Eigen::MatrixXd fb = mel_filterbank(opt.n_mels, n_fft, clip.sample_rate);

  // Periodic Hann.
  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                      static_cast<double>(win));
  }

  std::unique_ptr<double, FftwFree> in(fftw_alloc_real(n_fft));
  std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(n_bins));
  std::unique_ptr<fftw_plan_s, PlanDeleter> plan;
  {
    std::lock_guard lock(planner_mutex());
    plan.reset(fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in.get(), out.get(), FFTW_ESTIMATE));
  }

  FeatureMatrix result;
  result.frames.resize(static_cast<Eigen::Index>(n_frames), opt.n_mels);
  Eigen::VectorXd power(static_cast<Eigen::Index>(n_bins));
  const double log_floor = std::log(kEnergyFloor);

  for (std::size_t t = 0; t < n_frames; ++t) {
    const float* frame = clip.samples.data() + t * hop;
    std::fill(in.get(), in.get() + n_fft, 0.0);
    for (std::size_t i = 0; i < win; ++i) in.get()[i] = frame[i] * window[i];
    fftw_execute(plan.get());
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double re = out.get()[k][0], im = out.get()[k][1];
      power[static_cast<Eigen::Index>(k)] = re * re + im * im;
    }
    const Eigen::VectorXd energy = fb * power;
    for (int m = 0; m < opt.n_mels; ++m) {
      const double e = energy[m];
      result.frames(static_cast<Eigen::Index>(t), m) =
          static_cast<float>(e > kEnergyFloor ? std::log(e) : log_floor);
    }
  }
  return result;
}

FeatureStats compute_stats(std::span<const FeatureMatrix> features) {
  if (features.empty()) fail(ErrorKind::EmptyCollection, "no feature matrices");
  const Eigen::Index dim = features.front().dim();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  double count = 0;
  for (const auto& f : features) {
    if (f.dim() != dim) {
      fail(ErrorKind::DimensionMismatch,
           "feature dim " + std::to_string(f.dim()) + " vs " + std::to_string(dim));
    }
    sum += f.frames.cast<double>().colwise().sum().transpose();
    count += static_cast<double>(f.num_frames());
  }
  if (count == 0) fail(ErrorKind::EmptyCollection, "feature matrices contain no frames");

  FeatureStats stats;
  stats.mean = sum / count;
  // Two-pass variance around the pooled mean.
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(dim);
  for (const auto& f : features) {
    const Eigen::MatrixXd centred =
        f.frames.cast<double>().rowwise() - stats.mean.transpose();
    sq += centred.array().square().colwise().sum().matrix().transpose();
  }
  stats.std = (sq / count).array().sqrt().max(kStdFloor).matrix();
  return stats;
}

FeatureMatrix standardize(const FeatureMatrix& f, const FeatureStats& stats) {
  if (f.dim() != stats.dim()) {
    fail(ErrorKind::DimensionMismatch,
         "features have D=" + std::to_string(f.dim()) + ", stats D=" + std::to_string(stats.dim()));
  }
  FeatureMatrix out;
  out.frames = ((f.frames.cast<double>().rowwise() - stats.mean.transpose()).array().rowwise() /
                stats.std.transpose().array())
                   .cast<float>();
  return out;
}

std::vector<char> encode_features(const FeatureMatrix& f) {
  io::ByteWriter w;
  w.bytes("LMSF");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(f.num_frames()));
  w.u32(static_cast<std::uint32_t>(f.dim()));
  const float* p = f.frames.data();
  for (Eigen::Index i = 0; i < f.frames.size(); ++i) w.f32(p[i]);
  return w.data();
}

FeatureMatrix decode_features(std::span<const char> bytes) {
  io::ByteReader r(bytes, ErrorKind::TruncatedFile, "LMSF");
  io::expect_header(r, "LMSF", kFormatVersion, "LMSF");
  const std::uint32_t t = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint64_t n = static_cast<std::uint64_t>(t) * d;
  if (r.remaining() < n * 4) {
    fail(ErrorKind::TruncatedFile, "LMSF declares " + std::to_string(t) + "x" + std::to_string(d) +
                                       " but payload has " + std::to_string(r.remaining()) +
                                       " bytes");
  }
  FeatureMatrix f;
  f.frames.resize(t, d);
  float* p = f.frames.data();
  for (std::uint64_t i = 0; i < n; ++i) p[i] = r.f32();
  return f;
}

void write_features(const FeatureMatrix& f, const std::filesystem::path& path) {
  io::write_file(path, encode_features(f));
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  return decode_features(io::read_file(path));
}

void write_stats(const FeatureStats& s, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.bytes("LMST");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(s.dim()));
  for (Eigen::Index i = 0; i < s.dim(); ++i) w.f32(static_cast<float>(s.mean[i]));
  for (Eigen::Index i = 0; i < s.dim(); ++i) w.f32(static_cast<float>(s.std[i]));
  io::write_file(path, w.data());
}

FeatureStats read_stats(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes, ErrorKind::TruncatedFile, "LMST");
  io::expect_header(r, "LMST", kFormatVersion, "LMST");
  const std::uint32_t d = r.u32();
  r.require(static_cast<std::size_t>(d) * 8);
  FeatureStats s;
  s.mean.resize(d);
  s.std.resize(d);
  for (std::uint32_t i = 0; i < d; ++i) s.mean[i] = r.f32();
  for (std::uint32_t i = 0; i < d; ++i) s.std[i] = r.f32();
  return s;
}

}  // namespace acap::dsp

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "acap/binary_io.hpp"
#include "acap/error.hpp"
#include "acap/features.hpp"
#include "acap/random.hpp"
#include "test_util.hpp"

using namespace acap;
using namespace acap::dsp;

namespace {

AudioClip noise_clip(std::size_t n, std::uint64_t seed, int rate = 16000) {
  Rng rng(seed);
  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(n);
  for (auto& s : clip.samples) s = static_cast<float>(rng.uniform(-0.5, 0.5));
  return clip;
}

FeatureMatrix from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  FeatureMatrix f;
  f.frames.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (float v : r) f.frames(i, j++) = v;
    ++i;
  }
  return f;
}

}  // namespace

TEST_CASE("frame count follows 1 + floor((N - win) / hop)") {
  // 10 s at 16 kHz, 40 ms / 20 ms -> 640 / 320 samples.
  const auto [win, hop] = frame_lengths({}, 16000);
  CHECK(win == 640);
  CHECK(hop == 320);
  CHECK(frame_count(160000, win, hop) == 1 + (160000 - 640) / 320);
  CHECK(frame_count(160000, win, hop) == 499);

  const auto f = extract_lms(noise_clip(160000, 1));
  CHECK(f.num_frames() == 499);
  CHECK(f.dim() == 64);

  for (std::size_t n : {640u, 641u, 959u, 960u, 961u, 5000u}) {
    CHECK(static_cast<std::size_t>(extract_lms(noise_clip(n, n)).num_frames()) ==
          1 + (n - 640) / 320);
  }
}

TEST_CASE("clip of exactly one window gives one frame") {
  CHECK(extract_lms(noise_clip(640, 3)).num_frames() == 1);
}

TEST_CASE("silence hits the energy floor everywhere") {
  AudioClip clip;
  clip.samples.assign(4000, 0.0f);
  const auto f = extract_lms(clip);
  const float floor_value = static_cast<float>(std::log(kEnergyFloor));
  CHECK((f.frames.array() == floor_value).all());
}

TEST_CASE("extraction rejects short clips and bad parameters") {
  test::check_error(ErrorKind::ClipTooShort, [] { extract_lms(noise_clip(639, 1)); });
  test::check_error(ErrorKind::InvalidParam, [] { extract_lms(noise_clip(4000, 1), {0.0, 20.0, 64}); });
  test::check_error(ErrorKind::InvalidParam, [] { extract_lms(noise_clip(4000, 1), {40.0, -1.0, 64}); });
  test::check_error(ErrorKind::InvalidParam, [] { extract_lms(noise_clip(4000, 1), {40.0, 20.0, 0}); });
  test::check_error(ErrorKind::InvalidParam, [] { extract_lms(noise_clip(4000, 1), {10.0, 20.0, 64}); });
  test::check_error(ErrorKind::InvalidParam, [] { extract_lms(noise_clip(4000, 1, 4000)); });
}

TEST_CASE("scaling samples by c shifts LMS by log(c^2) above the floor") {
  const AudioClip base = noise_clip(8000, 11);
  const auto f0 = extract_lms(base);
  for (float c : {0.25f, 0.5f, 2.0f}) {
    AudioClip scaled = base;
    for (auto& s : scaled.samples) s *= c;
    const auto f1 = extract_lms(scaled);
    const double shift = std::log(static_cast<double>(c) * c);
    const double floor_value = std::log(kEnergyFloor);
    for (Eigen::Index i = 0; i < f0.frames.size(); ++i) {
      const double a = f0.frames.data()[i];
      const double b = f1.frames.data()[i];
      if (a > floor_value + 1 && b > floor_value + 1) CHECK(b - a == doctest::Approx(shift).epsilon(1e-4));
    }
  }
}

TEST_CASE("mel filterbank triangles are non-negative and peak at 1") {
  const auto fb = mel_filterbank(64, 1024, 16000);
  CHECK(fb.rows() == 64);
  CHECK(fb.cols() == 513);
  CHECK(fb.minCoeff() >= 0.0);
  CHECK(fb.maxCoeff() <= 1.0);
  for (Eigen::Index m = 0; m < fb.rows(); ++m) CHECK(fb.row(m).maxCoeff() > 0.0);
}

TEST_CASE("compute_stats uses pooled population statistics") {
  const std::vector<FeatureMatrix> fs{from_rows({{0, 2}}), from_rows({{2, 4}})};
  const auto s = compute_stats(fs);
  CHECK(s.mean[0] == doctest::Approx(1.0));
  CHECK(s.mean[1] == doctest::Approx(3.0));
  CHECK(s.std[0] == doctest::Approx(1.0));
  CHECK(s.std[1] == doctest::Approx(1.0));
}

TEST_CASE("constant features floor the std; duplicates do not change stats") {
  const std::vector<FeatureMatrix> one{from_rows({{5, -1}, {5, -1}, {5, -1}})};
  const auto s = compute_stats(one);
  CHECK(s.std[0] == kStdFloor);
  CHECK(s.std[1] == kStdFloor);

  const auto x = from_rows({{1, 2}, {3, 5}, {-4, 0.5f}});
  const std::vector<FeatureMatrix> single{x};
  const std::vector<FeatureMatrix> copies{x, x, x};
  const auto a = compute_stats(single);
  const auto b = compute_stats(copies);
  CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.std - b.std).cwiseAbs().maxCoeff() < 1e-12);

  test::check_error(ErrorKind::EmptyCollection, [] { compute_stats(std::vector<FeatureMatrix>{}); });
}

TEST_CASE("standardize centres and scales") {
  FeatureStats s{Eigen::Vector2d(1, 3), Eigen::Vector2d(1, 1)};
  const auto out = standardize(from_rows({{1, 3}}), s);
  CHECK(out.frames(0, 0) == 0.0f);
  CHECK(out.frames(0, 1) == 0.0f);

  const auto x = from_rows({{1.5f, -2}, {7, 0.25f}});
  FeatureStats id{Eigen::Vector2d::Zero(), Eigen::Vector2d::Ones()};
  CHECK(standardize(x, id) == x);

  FeatureStats wrong{Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones()};
  test::check_error(ErrorKind::DimensionMismatch, [&] { standardize(x, wrong); });
}

TEST_CASE("standardization round trip yields zero mean and unit std") {
  std::vector<FeatureMatrix> train;
  for (std::uint64_t seed = 0; seed < 5; ++seed) train.push_back(extract_lms(noise_clip(6000 + 700 * seed, seed)));
  const auto stats = compute_stats(train);
  std::vector<FeatureMatrix> z;
  for (const auto& f : train) z.push_back(standardize(f, stats));
  const auto again = compute_stats(z);
  CHECK(again.mean.cwiseAbs().maxCoeff() < 1e-6);
  CHECK((again.std.array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("LMSF round trip is bit exact and corrupt files are rejected") {
  const auto dir = test::temp_dir("dsp");
  const auto f = extract_lms(noise_clip(5000, 9));
  write_features(f, dir / "a.lmsf");
  const auto g = read_features(dir / "a.lmsf");
  REQUIRE(g.frames.size() == f.frames.size());
  CHECK(std::memcmp(g.frames.data(), f.frames.data(), sizeof(float) * f.frames.size()) == 0);

  auto bytes = encode_features(f);
  auto bad = bytes;
  bad[0] = 'X';
  test::check_error(ErrorKind::BadMagic, [&] { decode_features(bad); });
  auto version = bytes;
  version[4] = 2;
  test::check_error(ErrorKind::VersionMismatch, [&] { decode_features(version); });
  auto big = bytes;
  big[8] = static_cast<char>(0xFF);  // inflate T
  test::check_error(ErrorKind::TruncatedFile, [&] { decode_features(big); });
  bytes.resize(bytes.size() - 1);
  test::check_error(ErrorKind::TruncatedFile, [&] { decode_features(bytes); });
  test::check_error(ErrorKind::IoError, [&] { read_features(dir / "missing.lmsf"); });
}

TEST_CASE("stats file round trip at float32") {
  const auto dir = test::temp_dir("dsp_stats");
  FeatureStats s{Eigen::Vector3d(1.5, -2.25, 3), Eigen::Vector3d(0.5, 1, 2)};
  write_stats(s, dir / "s.lmst");
  const auto t = read_stats(dir / "s.lmst");
  CHECK(t.mean == s.mean);
  CHECK(t.std == s.std);
}

TEST_CASE("WAV read/write; stereo is averaged to mono") {
  const auto dir = test::temp_dir("wav");
  AudioClip clip = noise_clip(1000, 5, 22050);
  write_wav(dir / "m.wav", clip);
  const auto back = read_wav(dir / "m.wav");
  CHECK(back.sample_rate == 22050);
  REQUIRE(back.samples.size() == clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i) CHECK(std::abs(back.samples[i] - clip.samples[i]) < 1e-4);

  // Hand-built stereo file: L = 16384, R = -8192 -> mean 4096 / 32768 = 0.125.
  io::ByteWriter w;
  auto u16 = [&](int v) { w.bytes(std::string{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)}); };
  w.bytes("RIFF");
  w.u32(36 + 8);
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  u16(1);
  u16(2);
  w.u32(8000);
  w.u32(8000 * 4);
  u16(4);
  u16(16);
  w.bytes("data");
  w.u32(8);
  for (int k = 0; k < 2; ++k) {
    u16(16384);
    u16(-8192 & 0xFFFF);
  }
  io::write_file(dir / "s.wav", w.data());
  const auto stereo = read_wav(dir / "s.wav");
  REQUIRE(stereo.samples.size() == 2);
  CHECK(stereo.samples[0] == doctest::Approx(0.125));

  io::write_text(dir / "junk.wav", "not a wav file at all");
  test::check_error(ErrorKind::BadWav, [&] { read_wav(dir / "junk.wav"); });
}

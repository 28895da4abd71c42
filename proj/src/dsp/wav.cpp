// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "acap/binary_io.hpp"
#include "acap/error.hpp"
#include "acap/features.hpp"

namespace acap::dsp {

AudioClip read_wav(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  const std::string what = "WAV " + path.string();
  io::ByteReader r(bytes, ErrorKind::BadWav, what);
  if (r.remaining() < 12 || r.bytes(4) != "RIFF") fail(ErrorKind::BadWav, what + ": no RIFF header");
  r.u32();
  if (r.bytes(4) != "WAVE") fail(ErrorKind::BadWav, what + ": not a WAVE file");

  int channels = 0;
  int rate = 0;
  int bits = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const std::string id = r.bytes(4);
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      if (size < 16) fail(ErrorKind::BadWav, what + ": fmt chunk too small");
      const std::string body = r.bytes(size);
      const auto byte = [&](std::size_t off) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(body[off]));
      };
      const auto u16 = [&](std::size_t off) { return byte(off) | (byte(off + 1) << 8); };
      const std::uint32_t format_tag = u16(0);
      channels = static_cast<int>(u16(2));
      rate = static_cast<int>(u16(4) | (u16(6) << 16));
      bits = static_cast<int>(u16(14));
      // WAVE_FORMAT_EXTENSIBLE carries PCM too.
      if (format_tag != 1 && format_tag != 0xFFFE) {
        fail(ErrorKind::BadWav, what + ": only PCM is supported");
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail(ErrorKind::BadWav, what + ": data chunk before fmt");
      if (bits != 16) fail(ErrorKind::BadWav, what + ": only 16-bit samples are supported");
      if (channels <= 0) fail(ErrorKind::BadWav, what + ": zero channels");
      const std::size_t frame_bytes = 2 * static_cast<std::size_t>(channels);
      const std::size_t avail = std::min<std::size_t>(size, r.remaining());
      const std::string data = r.bytes(avail);
      AudioClip clip;
      clip.sample_rate = rate;
      const std::size_t n = avail / frame_bytes;
      clip.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
          const std::size_t off = i * frame_bytes + 2 * static_cast<std::size_t>(c);
          const auto v = static_cast<std::int16_t>(
              static_cast<unsigned char>(data[off]) |
              (static_cast<unsigned char>(data[off + 1]) << 8));
          acc += v / 32768.0;
        }
        clip.samples[i] = static_cast<float>(acc / channels);
      }
      clip.validate();
      return clip;
    } else {
      r.bytes(std::min<std::size_t>(size + (size & 1), r.remaining()));
    }
  }
  fail(ErrorKind::BadWav, what + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  clip.validate();
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  io::ByteWriter w;
  const auto u16 = [&](std::uint16_t v) {
    w.bytes(std::string{static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)});
  };
  w.bytes("RIFF");
  w.u32(36 + 2 * n);
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  u16(1);
  u16(1);
  w.u32(static_cast<std::uint32_t>(clip.sample_rate));
  w.u32(static_cast<std::uint32_t>(clip.sample_rate) * 2);
  u16(2);
  u16(16);
  w.bytes("data");
  w.u32(2 * n);
  for (float s : clip.samples) {
    const double scaled = std::clamp(static_cast<double>(s), -1.0, 1.0) * 32767.0;
    u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(scaled))));
  }
  io::write_file(path, w.data());
}

}  // namespace acap::dsp

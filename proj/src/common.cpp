// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <iterator>

#include "acap/binary_io.hpp"
#include "acap/error.hpp"

namespace acap {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidParam: return "InvalidParam";
    case ErrorKind::ClipTooShort: return "ClipTooShort";
    case ErrorKind::EmptyCollection: return "EmptyCollection";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::BadWav: return "BadWav";
    case ErrorKind::EmptyManifest: return "EmptyManifest";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::DuplicateAudioId: return "DuplicateAudioId";
    case ErrorKind::DuplicateCaptionId: return "DuplicateCaptionId";
    case ErrorKind::MissingField: return "MissingField";
    case ErrorKind::EmptyTokenList: return "EmptyTokenList";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptySequence: return "EmptySequence";
    case ErrorKind::TargetOutOfRange: return "TargetOutOfRange";
    case ErrorKind::EmptyCaption: return "EmptyCaption";
    case ErrorKind::TooFewEntries: return "TooFewEntries";
    case ErrorKind::MissingEmbedding: return "MissingEmbedding";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::CorruptTensor: return "CorruptTensor";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::EmptyList: return "EmptyList";
  }
  return "Unknown";
}

namespace io {

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::IoError, "read failed: " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const char> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot open for writing " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorKind::IoError, "write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  auto data = read_file(path);
  return {data.begin(), data.end()};
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span<const char>(text.data(), text.size()));
}

void expect_header(ByteReader& in, std::string_view magic, std::uint32_t version,
                   const std::string& what) {
  if (in.remaining() < magic.size() || in.bytes(magic.size()) != magic) {
    fail(ErrorKind::BadMagic, what + ": expected magic \"" + std::string(magic) + "\"");
  }
  if (in.remaining() < 4) fail(ErrorKind::TruncatedFile, what + ": header ends before version");
  const auto v = in.u32();
  if (v != version) {
    fail(ErrorKind::VersionMismatch,
         what + ": version " + std::to_string(v) + ", expected " + std::to_string(version));
  }
}

}  // namespace io
}  // namespace acap

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace acap {

/// Every failure the toolkit reports is one of these kinds. The CLI maps
/// them onto exit codes and a one-line error record.
enum class ErrorKind {
  InvalidParam,
  ClipTooShort,
  EmptyCollection,
  DimensionMismatch,
  IoError,
  BadMagic,
  VersionMismatch,
  TruncatedFile,
  BadWav,
  EmptyManifest,
  ParseError,
  DuplicateAudioId,
  DuplicateCaptionId,
  MissingField,
  EmptyTokenList,
  DimMismatch,
  ShapeMismatch,
  EmptySequence,
  TargetOutOfRange,
  EmptyCaption,
  TooFewEntries,
  MissingEmbedding,
  NonFiniteLoss,
  CorruptTensor,
  EmptyCorpus,
  EmptyList,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, std::string(to_string(kind)) + ": " + message);
}

}  // namespace acap

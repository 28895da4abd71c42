// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace acap::corpus {

struct CaptionRecord {
  std::string caption_id;
  std::string text;
  std::vector<std::string> tokens;
  std::optional<std::uint32_t> embedding_row;

  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

struct ManifestEntry {
  std::string audio_id;
  std::string feature_path;
  std::vector<CaptionRecord> captions;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

using Manifest = std::vector<ManifestEntry>;

/// One JSON object per line:
///   {"audio_id": str, "feature_path": str,
///    "captions": [{"caption_id": str, "text": str, "tokens": [str], "embedding_row": int|null}]}
/// Blank lines are skipped. Errors carry the 1-based line number.
Manifest parse_manifest(std::string_view text);
std::string format_manifest(std::span<const ManifestEntry> manifest);

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(std::span<const ManifestEntry> manifest, const std::filesystem::path& path);

/// Throws DuplicateAudioId / DuplicateCaptionId / MissingField.
void validate_manifest(std::span<const ManifestEntry> manifest);

/// Relative feature paths are resolved against the manifest's directory.
std::filesystem::path resolve_feature_path(const ManifestEntry& entry,
                                           const std::filesystem::path& manifest_path);

}  // namespace acap::corpus

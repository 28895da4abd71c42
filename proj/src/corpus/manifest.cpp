// SPDX-License-Identifier: Apache-2.0
#include "acap/manifest.hpp"

#include <json.hpp>
#include <set>

#include "acap/binary_io.hpp"
#include "acap/error.hpp"

namespace acap::corpus {

namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void line_error(ErrorKind kind, std::size_t line, const std::string& msg) {
  fail(kind, "line " + std::to_string(line) + ": " + msg);
}

const Json& field(const Json& obj, const char* name, std::size_t line) {
  const auto it = obj.find(name);
  if (it == obj.end()) line_error(ErrorKind::MissingField, line, name);
  return *it;
}

std::string string_field(const Json& obj, const char* name, std::size_t line) {
  const Json& v = field(obj, name, line);
  if (!v.is_string()) line_error(ErrorKind::ParseError, line, std::string(name) + " must be a string");
  return v.get<std::string>();
}

CaptionRecord parse_caption(const Json& c, std::size_t line) {
  if (!c.is_object()) line_error(ErrorKind::ParseError, line, "caption must be an object");
  CaptionRecord rec;
  rec.caption_id = string_field(c, "caption_id", line);
  rec.text = string_field(c, "text", line);
  const Json& tokens = field(c, "tokens", line);
  if (!tokens.is_array()) line_error(ErrorKind::ParseError, line, "tokens must be an array");
  for (const auto& t : tokens) {
    if (!t.is_string()) line_error(ErrorKind::ParseError, line, "tokens must be strings");
    rec.tokens.push_back(t.get<std::string>());
  }
  if (rec.tokens.empty()) line_error(ErrorKind::MissingField, line, "tokens");
  const Json& row = field(c, "embedding_row", line);
  if (!row.is_null()) {
    if (!row.is_number_unsigned()) {
      line_error(ErrorKind::ParseError, line, "embedding_row must be a non-negative integer or null");
    }
    rec.embedding_row = row.get<std::uint32_t>();
  }
  return rec;
}

}  // namespace

Manifest parse_manifest(std::string_view text) {
  Manifest out;
  std::set<std::string> audio_ids;
  std::set<std::string> caption_ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    Json obj;
    try {
      obj = Json::parse(line);
    } catch (const Json::parse_error& e) {
      line_error(ErrorKind::ParseError, line_no, e.what());
    }
    if (!obj.is_object()) line_error(ErrorKind::ParseError, line_no, "record must be an object");

    ManifestEntry entry;
    entry.audio_id = string_field(obj, "audio_id", line_no);
    entry.feature_path = string_field(obj, "feature_path", line_no);
    const Json& caps = field(obj, "captions", line_no);
    if (!caps.is_array()) line_error(ErrorKind::ParseError, line_no, "captions must be an array");
    if (caps.empty()) line_error(ErrorKind::MissingField, line_no, "captions");
    for (const auto& c : caps) {
      entry.captions.push_back(parse_caption(c, line_no));
      if (!caption_ids.insert(entry.captions.back().caption_id).second) {
        line_error(ErrorKind::DuplicateCaptionId, line_no, entry.captions.back().caption_id);
      }
    }
    if (!audio_ids.insert(entry.audio_id).second) {
      line_error(ErrorKind::DuplicateAudioId, line_no, entry.audio_id);
    }
    out.push_back(std::move(entry));
  }
  return out;
}

std::string format_manifest(std::span<const ManifestEntry> manifest) {
  std::string out;
  for (const auto& e : manifest) {
    Json caps = Json::array();
    for (const auto& c : e.captions) {
      Json cj;
      cj["caption_id"] = c.caption_id;
      cj["text"] = c.text;
      cj["tokens"] = c.tokens;
      cj["embedding_row"] = c.embedding_row ? Json(*c.embedding_row) : Json(nullptr);
      caps.push_back(std::move(cj));
    }
    Json obj;
    obj["audio_id"] = e.audio_id;
    obj["feature_path"] = e.feature_path;
    obj["captions"] = std::move(caps);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void validate_manifest(std::span<const ManifestEntry> manifest) {
  std::set<std::string> audio_ids;
  std::set<std::string> caption_ids;
  for (const auto& e : manifest) {
    if (!audio_ids.insert(e.audio_id).second) fail(ErrorKind::DuplicateAudioId, e.audio_id);
    if (e.captions.empty()) fail(ErrorKind::MissingField, "captions of " + e.audio_id);
    for (const auto& c : e.captions) {
      if (c.tokens.empty()) fail(ErrorKind::MissingField, "tokens of " + c.caption_id);
      if (!caption_ids.insert(c.caption_id).second) fail(ErrorKind::DuplicateCaptionId, c.caption_id);
    }
  }
}

Manifest load_manifest(const std::filesystem::path& path) {
  try {
    return parse_manifest(io::read_text(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::IoError) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void save_manifest(std::span<const ManifestEntry> manifest, const std::filesystem::path& path) {
  validate_manifest(manifest);
  io::write_text(path, format_manifest(manifest));
}

std::filesystem::path resolve_feature_path(const ManifestEntry& entry,
                                           const std::filesystem::path& manifest_path) {
  std::filesystem::path p(entry.feature_path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

}  // namespace acap::corpus

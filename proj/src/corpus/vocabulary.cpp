// SPDX-License-Identifier: Apache-2.0
#include "acap/vocabulary.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "acap/binary_io.hpp"
#include "acap/error.hpp"
#include "acap/manifest.hpp"

namespace acap::corpus {

namespace {
const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> s{"<pad>", "<sos>", "<eos>", "<unk>"};
  return s;
}
}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  id_to_token_ = special_tokens();
  id_to_token_.reserve(tokens.size() + kNumSpecials);
  for (auto& t : tokens) {
    if (t.empty() || t.find('\n') != std::string::npos) {
      fail(ErrorKind::InvalidParam, "vocabulary token is empty or contains a newline");
    }
    id_to_token_.push_back(std::move(t));
  }
  for (int i = 0; i < size(); ++i) {
    const auto [it, inserted] = token_to_id_.emplace(id_to_token_[static_cast<std::size_t>(i)], i);
    if (!inserted) fail(ErrorKind::InvalidParam, "duplicate vocabulary token \"" + it->first + "\"");
  }
  if (size() <= kNumSpecials) fail(ErrorKind::InvalidParam, "vocabulary has no surface tokens");
}

int Vocabulary::id(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) fail(ErrorKind::TargetOutOfRange, "token id " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

Vocabulary build_vocab(std::span<const ManifestEntry> manifest, int min_count) {
  if (manifest.empty()) fail(ErrorKind::EmptyManifest, "cannot build a vocabulary");
  std::map<std::string, long> counts;
  for (const auto& entry : manifest) {
    for (const auto& caption : entry.captions) {
      for (const auto& t : caption.tokens) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [token, n] : counts) {
    if (n >= min_count) kept.emplace_back(token, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [token, n] : kept) tokens.push_back(token);
  if (tokens.empty()) {
    fail(ErrorKind::InvalidParam, "no token occurs at least " + std::to_string(min_count) + " times");
  }
  return Vocabulary(std::move(tokens));
}

std::vector<int> encode(std::span<const std::string> tokens, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size() + 1);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::vector<std::string> decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == Vocabulary::kEos) break;
    if (Vocabulary::is_special(id)) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::string text;
  for (const auto& t : vocab.tokens()) {
    text += t;
    text += '\n';
  }
  io::write_text(path, text);
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  const auto& specials = special_tokens();
  if (lines.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), lines.begin())) {
    fail(ErrorKind::ParseError, path.string() + ": vocabulary must start with the 4 special tokens");
  }
  return Vocabulary({lines.begin() + Vocabulary::kNumSpecials, lines.end()});
}

}  // namespace acap::corpus

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace acap::corpus {

struct ManifestEntry;

/// Token inventory with fixed special ids PAD=0, SOS=1, EOS=2, UNK=3.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;

  /// `tokens` are the non-special surface tokens in id order (first gets id 4).
  explicit Vocabulary(std::vector<std::string> tokens);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

/// Counts tokens over every caption; keeps those seen at least `min_count`
/// times, ordered by descending count then lexicographically.
Vocabulary build_vocab(std::span<const ManifestEntry> manifest, int min_count = 1);

/// Maps tokens to ids (unknown -> UNK) and appends EOS.
std::vector<int> encode(std::span<const std::string> tokens, const Vocabulary& vocab);

/// Stops at the first EOS and drops every special id.
std::vector<std::string> decode(std::span<const int> ids, const Vocabulary& vocab);

// Vocabulary file: UTF-8, one token per line, line i holds id i (specials first).
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocab(const std::filesystem::path& path);

}  // namespace acap::corpus

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "acap/manifest.hpp"

namespace acap::corpus {

inline constexpr int kSentenceEmbeddingDim = 768;

using EmbeddingRows = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N x dim sentence embeddings, one row per caption.
struct EmbeddingTable {
  EmbeddingRows rows;

  Eigen::Index dim() const { return rows.cols(); }
  Eigen::Index count() const { return rows.rows(); }

  /// dim >= 1, entries finite, no all-zero row.
  void validate() const;

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.rows.rows() == b.rows.rows() && a.rows.cols() == b.rows.cols() && a.rows == b.rows;
  }
};

// SEMB: "SEMB", u32 version=1, u32 N, u32 dim, N*dim float32 row-major.
void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_embeddings(const std::filesystem::path& path,
                               std::optional<int> expected_dim = std::nullopt);
std::vector<char> encode_embeddings(const EmbeddingTable& table);
EmbeddingTable decode_embeddings(std::span<const char> bytes,
                                 std::optional<int> expected_dim = std::nullopt);

/// Deterministic hashed bag of unigrams and bigrams, L2-normalized.
/// Each n-gram hashes (FNV-1a 64, mixed with the seed through SplitMix64) to a
/// coordinate and a sign; contributions are summed.
Eigen::VectorXd fallback_embed(std::span<const std::string> tokens,
                               int dim = kSentenceEmbeddingDim, std::uint64_t seed = 0);

/// Embeds every caption in manifest order and assigns embedding_row to match.
EmbeddingTable embed_manifest(Manifest& manifest, int dim, std::uint64_t seed);

/// Every caption's embedding_row (when present) indexes into `table`.
void check_embedding_rows(std::span<const ManifestEntry> manifest, const EmbeddingTable& table);

}  // namespace acap::corpus

// SPDX-License-Identifier: Apache-2.0
#include "acap/embeddings.hpp"

#include <cmath>

#include "acap/binary_io.hpp"
#include "acap/error.hpp"
#include "acap/random.hpp"

namespace acap::corpus {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void add_feature(Eigen::VectorXd& acc, std::string_view key, std::uint64_t seed) {
  std::uint64_t state = fnv1a(key) ^ seed;
  const std::uint64_t h = splitmix64(state);
  const auto slot = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(acc.size()));
  acc[slot] += (h >> 63) ? -1.0 : 1.0;
}

}  // namespace

void EmbeddingTable::validate() const {
  if (dim() < 1) fail(ErrorKind::DimMismatch, "embedding dim must be >= 1");
  for (Eigen::Index i = 0; i < count(); ++i) {
    const auto row = rows.row(i);
    if (!row.allFinite()) fail(ErrorKind::InvalidParam, "embedding row " + std::to_string(i) + " is not finite");
    if ((row.array() == 0.0f).all()) {
      fail(ErrorKind::InvalidParam, "embedding row " + std::to_string(i) + " is all zero");
    }
  }
}

std::vector<char> encode_embeddings(const EmbeddingTable& table) {
  io::ByteWriter w;
  w.bytes("SEMB");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(table.count()));
  w.u32(static_cast<std::uint32_t>(table.dim()));
  const float* p = table.rows.data();
  for (Eigen::Index i = 0; i < table.rows.size(); ++i) w.f32(p[i]);
  return w.data();
}

EmbeddingTable decode_embeddings(std::span<const char> bytes, std::optional<int> expected_dim) {
  io::ByteReader r(bytes, ErrorKind::TruncatedFile, "SEMB");
  io::expect_header(r, "SEMB", kFormatVersion, "SEMB");
  const std::uint32_t n = r.u32();
  const std::uint32_t dim = r.u32();
  if (expected_dim && static_cast<std::uint32_t>(*expected_dim) != dim) {
    fail(ErrorKind::DimMismatch,
         "SEMB dim " + std::to_string(dim) + ", expected " + std::to_string(*expected_dim));
  }
  const std::uint64_t total = static_cast<std::uint64_t>(n) * dim;
  if (r.remaining() < total * 4) {
    fail(ErrorKind::TruncatedFile, "SEMB declares " + std::to_string(n) + " rows of dim " +
                                       std::to_string(dim) + ", payload holds " +
                                       std::to_string(r.remaining() / 4) + " floats");
  }
  EmbeddingTable t;
  t.rows.resize(n, dim);
  float* p = t.rows.data();
  for (std::uint64_t i = 0; i < total; ++i) p[i] = r.f32();
  t.validate();
  return t;
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  table.validate();
  io::write_file(path, encode_embeddings(table));
}

EmbeddingTable read_embeddings(const std::filesystem::path& path, std::optional<int> expected_dim) {
  return decode_embeddings(io::read_file(path), expected_dim);
}

Eigen::VectorXd fallback_embed(std::span<const std::string> tokens, int dim, std::uint64_t seed) {
  if (tokens.empty()) fail(ErrorKind::EmptyTokenList, "fallback_embed needs at least one token");
  if (dim < 1) fail(ErrorKind::InvalidParam, "embedding dim must be >= 1");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  // Unit separator keeps ("ab","c") and ("a","bc") apart.
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    add_feature(v, "u\x1f" + tokens[i], seed);
    if (i + 1 < tokens.size()) add_feature(v, "b\x1f" + tokens[i] + "\x1f" + tokens[i + 1], seed);
  }
  double norm = v.norm();
  if (norm == 0.0) {
    // Signed contributions cancelled exactly; fall back to the first unigram slot.
    std::uint64_t state = fnv1a("u\x1f" + tokens[0]) ^ seed;
    v[static_cast<Eigen::Index>(splitmix64(state) % static_cast<std::uint64_t>(dim))] = 1.0;
    norm = 1.0;
  }
  return v / norm;
}

EmbeddingTable embed_manifest(Manifest& manifest, int dim, std::uint64_t seed) {
  std::size_t n = 0;
  for (const auto& e : manifest) n += e.captions.size();
  EmbeddingTable table;
  table.rows.resize(static_cast<Eigen::Index>(n), dim);
  std::uint32_t row = 0;
  for (auto& e : manifest) {
    for (auto& c : e.captions) {
      table.rows.row(row) = fallback_embed(c.tokens, dim, seed).cast<float>().transpose();
      c.embedding_row = row++;
    }
  }
  return table;
}

void check_embedding_rows(std::span<const ManifestEntry> manifest, const EmbeddingTable& table) {
  for (const auto& e : manifest) {
    for (const auto& c : e.captions) {
      if (c.embedding_row && *c.embedding_row >= table.count()) {
        fail(ErrorKind::InvalidParam, "caption " + c.caption_id + " has embedding_row " +
                                          std::to_string(*c.embedding_row) + " beyond " +
                                          std::to_string(table.count()) + " rows");
      }
    }
  }
}

}  // namespace acap::corpus

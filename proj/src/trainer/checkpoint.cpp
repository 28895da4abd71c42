// SPDX-License-Identifier: Apache-2.0
#include <type_traits>

#include "acap/binary_io.hpp"
#include "acap/error.hpp"
#include "acap/trainer.hpp"

namespace acap::train {

namespace {

constexpr std::uint32_t kVersion = 1;

template <class Tensor>
constexpr bool is_vector_v = std::remove_cvref_t<Tensor>::ColsAtCompileTime == 1;

void write_config(io::ByteWriter& w, const ModelConfig& c) {
  for (int v : {c.feat_dim, c.enc_hidden, c.v_dim, c.dec_hidden, c.word_emb_dim, c.vocab_size,
                c.sent_emb_dim, c.max_decode_len}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.f64(c.alpha);
}

ModelConfig read_config(io::ByteReader& r) {
  ModelConfig c;
  for (int* v : {&c.feat_dim, &c.enc_hidden, &c.v_dim, &c.dec_hidden, &c.word_emb_dim,
                 &c.vocab_size, &c.sent_emb_dim, &c.max_decode_len}) {
    *v = static_cast<int>(r.u32());
  }
  c.alpha = r.f64();
  return c;
}

// Parameter count implied by a config, computed before allocating anything.
double implied_values(const ModelConfig& c) {
  const auto gru = [](double in, double h) { return 3 * h * (in + h) + 6 * h; };
  const double dec_in = static_cast<double>(c.word_emb_dim) + c.v_dim;
  return gru(c.feat_dim, c.enc_hidden) + (c.enc_hidden + 1.0) * c.v_dim +
         static_cast<double>(c.vocab_size) * c.word_emb_dim + gru(dec_in, c.dec_hidden) +
         (c.dec_hidden + 1.0) * c.vocab_size + (c.dec_hidden + 1.0) * c.sent_emb_dim;
}

}  // namespace

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.bytes("ACKP");
  w.u32(kVersion);
  write_config(w, ckpt.config);
  w.u32(static_cast<std::uint32_t>(ckpt.epoch));
  w.f64(ckpt.best_val_cider);

  std::uint32_t count = 0;
  ckpt.params.for_each([&](const std::string&, const auto&) { ++count; });
  w.u32(count);
  ckpt.params.for_each([&](const std::string& name, const auto& t) {
    w.str(name);
    if constexpr (is_vector_v<decltype(t)>) {
      w.u32(1);
      w.u32(static_cast<std::uint32_t>(t.size()));
      for (Eigen::Index i = 0; i < t.size(); ++i) w.f32(t[i]);
    } else {
      w.u32(2);
      w.u32(static_cast<std::uint32_t>(t.rows()));
      w.u32(static_cast<std::uint32_t>(t.cols()));
      for (Eigen::Index i = 0; i < t.rows(); ++i) {
        for (Eigen::Index j = 0; j < t.cols(); ++j) w.f32(t(i, j));
      }
    }
  });

  w.u32(static_cast<std::uint32_t>(ckpt.vocab.size()));
  for (const auto& tok : ckpt.vocab.tokens()) w.str(tok);

  w.u32(static_cast<std::uint32_t>(ckpt.stats.dim()));
  for (Eigen::Index i = 0; i < ckpt.stats.dim(); ++i) w.f32(static_cast<float>(ckpt.stats.mean[i]));
  for (Eigen::Index i = 0; i < ckpt.stats.dim(); ++i) w.f32(static_cast<float>(ckpt.stats.std[i]));
  return w.data();
}

Checkpoint decode_checkpoint(std::span<const char> bytes, const std::optional<ModelConfig>& expected) {
  io::ByteReader r(bytes, ErrorKind::CorruptTensor, "checkpoint");
  io::expect_header(r, "ACKP", kVersion, "checkpoint");
  const ModelConfig cfg = read_config(r);
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::CorruptTensor, std::string("checkpoint config: ") + e.what());
  }
  if (expected) {
    ModelConfig a = cfg, b = *expected;
    a.alpha = b.alpha = 0;
    a.max_decode_len = b.max_decode_len = 0;
    if (!(a == b)) {
      fail(ErrorKind::ShapeMismatch,
           "checkpoint model (vocab " + std::to_string(cfg.vocab_size) + ", feat " +
               std::to_string(cfg.feat_dim) + ", hidden " + std::to_string(cfg.enc_hidden) + "/" +
               std::to_string(cfg.dec_hidden) + ") differs from expected (vocab " +
               std::to_string(expected->vocab_size) + ", feat " +
               std::to_string(expected->feat_dim) + ", hidden " +
               std::to_string(expected->enc_hidden) + "/" + std::to_string(expected->dec_hidden) +
               ")");
    }
  }
  const int epoch = static_cast<int>(r.u32());
  if (implied_values(cfg) * 4 > static_cast<double>(r.remaining())) {
    fail(ErrorKind::CorruptTensor, "checkpoint payload shorter than its declared tensors");
  }
  const double best = r.f64();

  ModelParams<float> params = ModelParams<float>::zeros(cfg);
  std::uint32_t expected_count = 0;
  params.for_each([&](const std::string&, const auto&) { ++expected_count; });
  const std::uint32_t count = r.u32();
  if (count != expected_count) {
    fail(ErrorKind::ShapeMismatch, "checkpoint has " + std::to_string(count) + " tensors, expected " +
                                       std::to_string(expected_count));
  }
  params.for_each([&](const std::string& name, auto& t) {
    const std::string got = r.str();
    if (got != name) fail(ErrorKind::ShapeMismatch, "tensor \"" + got + "\" where \"" + name + "\" expected");
    const std::uint32_t rank = r.u32();
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    const bool vec = is_vector_v<decltype(t)>;
    const bool ok = vec ? (rank == 1 && dims[0] == t.size())
                        : (rank == 2 && dims[0] == t.rows() && dims[1] == t.cols());
    if (!ok) fail(ErrorKind::ShapeMismatch, "tensor " + name + " shape disagrees with config");
    r.require(static_cast<std::size_t>(t.size()) * 4);
    if constexpr (is_vector_v<decltype(t)>) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = r.f32();
    } else {
      for (Eigen::Index i = 0; i < t.rows(); ++i) {
        for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = r.f32();
      }
    }
    if (!t.allFinite()) fail(ErrorKind::CorruptTensor, "tensor " + name + " has non-finite values");
  });

  const std::uint32_t n_tokens = r.u32();
  if (static_cast<int>(n_tokens) != cfg.vocab_size) {
    fail(ErrorKind::ShapeMismatch, "embedded vocabulary has " + std::to_string(n_tokens) +
                                       " tokens, config says " + std::to_string(cfg.vocab_size));
  }
  std::vector<std::string> tokens;
  for (std::uint32_t i = 0; i < n_tokens; ++i) tokens.push_back(r.str());
  if (tokens.size() < corpus::Vocabulary::kNumSpecials) {
    fail(ErrorKind::CorruptTensor, "embedded vocabulary lacks special tokens");
  }
  corpus::Vocabulary vocab({tokens.begin() + corpus::Vocabulary::kNumSpecials, tokens.end()});
  if (!(vocab.tokens() == tokens)) fail(ErrorKind::CorruptTensor, "embedded vocabulary specials differ");

  const std::uint32_t d = r.u32();
  if (static_cast<int>(d) != cfg.feat_dim) {
    fail(ErrorKind::ShapeMismatch, "stats dim " + std::to_string(d) + " vs feat_dim " +
                                       std::to_string(cfg.feat_dim));
  }
  dsp::FeatureStats stats;
  stats.mean.resize(d);
  stats.std.resize(d);
  for (std::uint32_t i = 0; i < d; ++i) stats.mean[i] = r.f32();
  for (std::uint32_t i = 0; i < d; ++i) stats.std[i] = r.f32();
  if (r.remaining() != 0) fail(ErrorKind::CorruptTensor, "trailing bytes after stats section");

  return Checkpoint{cfg, std::move(params), std::move(vocab), std::move(stats), best, epoch};
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  return decode_checkpoint(io::read_file(path), expected);
}

}  // namespace acap::train

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "acap/binary_io.hpp"
#include "acap/trainer.hpp"
#include "support/synthetic.hpp"
#include "support/tiny_model.hpp"
#include "test_util.hpp"

using namespace acap;
using namespace acap::train;

namespace {

corpus::Manifest numbered_manifest(int n) {
  corpus::Manifest m;
  for (int i = 0; i < n; ++i) {
    const std::string id = "a" + std::to_string(i);
    m.push_back({id, id + ".lmsf", {{id + "_0", "x y", {"x", "y"}, std::nullopt},
                                    {id + "_1", "y z", {"y", "z"}, std::nullopt}}});
  }
  return m;
}

ModelConfig small_model(int feat_dim) {
  ModelConfig m;
  m.feat_dim = feat_dim;
  m.enc_hidden = 12;
  m.v_dim = 6;
  m.dec_hidden = 12;
  m.word_emb_dim = 6;
  m.sent_emb_dim = corpus::kSentenceEmbeddingDim;
  m.max_decode_len = 12;
  return m;
}

TrainConfig quick_config(int epochs, Precision precision = Precision::F64) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.lr = 1e-2;
  cfg.precision = precision;
  return cfg;
}

}  // namespace

TEST_CASE("split_dev: 9:1 partition by audio id") {
  const auto m = numbered_manifest(10);
  const auto s = split_dev(m, 0.1, 7);
  CHECK(s.train.size() == 9);
  CHECK(s.val.size() == 1);

  const auto again = split_dev(m, 0.1, 7);
  CHECK(again.train == s.train);
  CHECK(again.val == s.val);

  std::set<std::string> ids;
  for (const auto* side : {&s.train, &s.val})
    for (const auto& e : *side) CHECK(ids.insert(e.audio_id).second);
  CHECK(ids.size() == 10);

  // Different seeds eventually pick a different validation clip.
  bool differs = false;
  for (std::uint64_t seed = 0; seed < 10 && !differs; ++seed) differs = split_dev(m, 0.1, seed).val != s.val;
  CHECK(differs);

  CHECK(split_dev(numbered_manifest(2), 0.1, 0).val.size() == 1);
  CHECK(split_dev(numbered_manifest(3), 0.9, 0).train.size() == 1);
  test::check_error(ErrorKind::TooFewEntries, [] { split_dev(numbered_manifest(1), 0.1, 0); });
  test::check_error(ErrorKind::InvalidParam, [] { split_dev(numbered_manifest(4), 1.0, 0); });
}

TEST_CASE("Adam: first step moves each coordinate by about lr against the gradient") {
  const auto cfg_model = support::tiny_config();
  auto p = ModelParams<double>::init(cfg_model, 1);
  const auto before = p.flatten();
  auto g = ModelParams<double>::zeros(cfg_model);
  Rng rng(2);
  std::vector<double> gv(g.num_values());
  for (auto& x : gv) x = rng.uniform(-5, 5);
  g.unflatten(gv);
  auto state = AdamState<double>::zeros_like(p);
  TrainConfig cfg;
  adam_step(p, g, state, cfg);
  CHECK(state.step == 1);
  const auto after = p.flatten();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    const double delta = after[i] - before[i];
    CHECK(std::abs(delta) <= cfg.lr * (1 + 1e-12));
    if (std::abs(gv[i]) > 1e-3) {
      CHECK(delta * gv[i] < 0);
      CHECK(std::abs(delta) == doctest::Approx(cfg.lr).epsilon(1e-4));
    }
  }
}

TEST_CASE("Adam: zero gradients never move parameters") {
  const auto cfg_model = support::tiny_config();
  auto p = ModelParams<double>::init(cfg_model, 3);
  const auto before = p.flatten();
  const auto g = ModelParams<double>::zeros(cfg_model);
  auto state = AdamState<double>::zeros_like(p);
  for (int k = 0; k < 50; ++k) adam_step(p, g, state, TrainConfig{});
  CHECK(p.flatten() == before);
}

TEST_CASE("Adam on f(x) = x^2 matches a scalar re-derivation of the update") {
  const auto cfg_model = support::tiny_config();
  auto p = ModelParams<double>::zeros(cfg_model);
  std::vector<double> x(p.num_values(), 0.0);
  x[0] = 1.0;
  p.unflatten(x);
  auto state = AdamState<double>::zeros_like(p);
  TrainConfig cfg;

  double ref = 1.0, m = 0.0, u = 0.0;
  for (int t = 1; t <= 200; ++t) {
    auto g = ModelParams<double>::zeros(cfg_model);
    auto gv = p.flatten();
    for (auto& v : gv) v *= 2.0;
    g.unflatten(gv);
    adam_step(p, g, state, cfg);

    const double grad = 2.0 * ref;
    m = 0.9 * m + 0.1 * grad;
    u = 0.999 * u + 0.001 * grad * grad;
    ref -= cfg.lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(u / (1 - std::pow(0.999, t))) + cfg.adam_eps);
  }
  const double got = p.flatten()[0];
  CHECK(got == doctest::Approx(ref).epsilon(1e-12));
  CHECK(std::abs(got) < 1.0);
  CHECK(std::abs(got) > 0.9);  // 200 steps of ~lr each
}

TEST_CASE("Adam rejects mismatched shapes; gradient clipping") {
  const auto a = support::tiny_config();
  auto b = a;
  b.vocab_size = 25;
  auto p = ModelParams<double>::zeros(a);
  auto state = AdamState<double>::zeros_like(p);
  test::check_error(ErrorKind::ShapeMismatch,
                    [&] { adam_step(p, ModelParams<double>::zeros(b), state, TrainConfig{}); });

  auto g = ModelParams<double>::zeros(a);
  std::vector<double> gv(g.num_values(), 0.0);
  gv[0] = 3.0;
  gv[1] = 4.0;
  g.unflatten(gv);
  CHECK(clip_grad_norm(g, 10.0) == doctest::Approx(5.0));
  CHECK(g.flatten()[0] == 3.0);
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g.flatten()[0] == doctest::Approx(0.6));
  CHECK(g.flatten()[1] == doctest::Approx(0.8));
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto dir = test::temp_dir("ckpt");
  auto corpus = support::distinct_caption_corpus(4, 3, 5, 6, 5, 1);
  auto cfg = small_model(5);
  cfg.vocab_size = corpus.vocab.size();
  const Checkpoint ck{cfg, ModelParams<float>::init(cfg, 4), corpus.vocab,
                      {Eigen::VectorXd::LinSpaced(5, -1, 1), Eigen::VectorXd::Constant(5, 0.5)}, 1.25, 3};

  save_checkpoint(ck, dir / "m.ackp");
  const auto back = load_checkpoint(dir / "m.ackp", ck.config);
  CHECK(back.config == ck.config);
  CHECK(back.params.flatten() == ck.params.flatten());
  CHECK(back.vocab == ck.vocab);
  CHECK(back.stats.mean == ck.stats.mean);
  CHECK(back.epoch == 3);
  CHECK(back.best_val_cider == 1.25);
  CHECK(encode_checkpoint(back) == encode_checkpoint(ck));
  CHECK(caption_clips(back, corpus.frames) == caption_clips(ck, corpus.frames));

  const auto bytes = encode_checkpoint(ck);
  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{60}}) {
    const std::vector<char> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    test::check_error(ErrorKind::CorruptTensor, [&] { decode_checkpoint(part); });
  }
  auto magic = bytes;
  magic[0] = 'Z';
  test::check_error(ErrorKind::BadMagic, [&] { decode_checkpoint(magic); });
  auto version = bytes;
  version[4] = 9;
  test::check_error(ErrorKind::VersionMismatch, [&] { decode_checkpoint(version); });
  auto trailing = bytes;
  trailing.push_back('\0');
  test::check_error(ErrorKind::CorruptTensor, [&] { decode_checkpoint(trailing); });

  auto expected = ck.config;
  expected.vocab_size += 1;
  test::check_error(ErrorKind::ShapeMismatch, [&] { load_checkpoint(dir / "m.ackp", expected); });
}

TEST_CASE("make_dataset requires embeddings rows when asked") {
  auto c = support::distinct_caption_corpus(3, 3, 4, 5, 4, 2);
  const auto d = c.dataset();
  CHECK(d.samples.size() == 3);
  CHECK(d.samples[0].ids.back() == corpus::Vocabulary::kEos);
  CHECK(d.samples[0].e_ref->size() == corpus::kSentenceEmbeddingDim);
  CHECK(!c.dataset(false).samples[0].e_ref);
  c.manifest[1].captions[0].embedding_row.reset();
  test::check_error(ErrorKind::MissingEmbedding, [&] { c.dataset(); });
}

TEST_CASE("one epoch selects that epoch") {
  const auto c = support::distinct_caption_corpus(6, 3, 5, 6, 5, 3);
  const auto d = c.dataset();
  const auto r = train_on(d, d.clips, c.vocab, c.identity_stats(), small_model(5), quick_config(1));
  REQUIRE(r.log.size() == 1);
  CHECK(r.checkpoint.epoch == 1);
  CHECK(r.checkpoint.best_val_cider == r.log[0].val_cider);
}

TEST_CASE("training lowers the loss, selection takes the best epoch, runs are deterministic") {
  const auto c = support::distinct_caption_corpus(6, 3, 5, 6, 5, 4);
  const auto d = c.dataset();
  std::vector<EpochRecord> streamed;
  const auto r = train_on(d, d.clips, c.vocab, c.identity_stats(), small_model(5), quick_config(30),
                          [&](const EpochRecord& e) { streamed.push_back(e); });
  REQUIRE(r.log.size() == 30);
  CHECK(streamed.size() == 30);
  CHECK(r.log.back().combined < r.log.front().combined);
  double best = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  for (const auto& e : r.log) {
    CHECK(std::abs(e.combined - (e.ce + 10.0 * e.sentence)) <= 1e-9 * e.combined);
    if (e.val_cider > best) {
      best = e.val_cider;
      best_epoch = e.epoch;
    }
  }
  CHECK(r.checkpoint.best_val_cider == best);
  CHECK(r.checkpoint.epoch == best_epoch);

  const auto again = train_on(d, d.clips, c.vocab, c.identity_stats(), small_model(5), quick_config(30));
  CHECK(encode_checkpoint(again.checkpoint) == encode_checkpoint(r.checkpoint));

  auto other = quick_config(30);
  other.seed = 1;
  const auto diff = train_on(d, d.clips, c.vocab, c.identity_stats(), small_model(5), other);
  CHECK(encode_checkpoint(diff.checkpoint) != encode_checkpoint(r.checkpoint));
}

TEST_CASE("CE-only training needs no embeddings; combined does") {
  const auto c = support::distinct_caption_corpus(5, 3, 5, 6, 5, 5);
  const auto plain = c.dataset(false);
  auto cfg = quick_config(2, Precision::F32);
  cfg.loss_mode = LossMode::CeOnly;
  const auto r = train_on(plain, plain.clips, c.vocab, c.identity_stats(), small_model(5), cfg);
  for (const auto& e : r.log) {
    CHECK(e.sentence == 0.0);
    CHECK(e.combined == e.ce);
  }
  CHECK(r.checkpoint.config.alpha == 0.0);
  cfg.loss_mode = LossMode::Combined;
  test::check_error(ErrorKind::MissingEmbedding,
                    [&] { train_on(plain, plain.clips, c.vocab, c.identity_stats(), small_model(5), cfg); });
}

TEST_CASE("non-finite loss aborts training") {
  auto c = support::distinct_caption_corpus(4, 3, 5, 6, 5, 6);
  c.frames[2](0, 0) = std::numeric_limits<float>::quiet_NaN();
  const auto d = c.dataset();
  try {
    train_on(d, d.clips, c.vocab, c.identity_stats(), small_model(5), quick_config(1));
    FAIL("NaN features trained");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFiniteLoss);
    CHECK(std::string(e.what()).find("clip2_0") != std::string::npos);
  }
}

TEST_CASE("full recipe from feature files") {
  const auto dir = test::temp_dir("train_recipe");
  auto c = support::distinct_caption_corpus(10, 3, 5, 6, 5, 7);
  for (std::size_t i = 0; i < c.manifest.size(); ++i) {
    dsp::FeatureMatrix f;
    f.frames = c.frames[i];
    dsp::write_features(f, dir / c.manifest[i].feature_path);
  }
  corpus::save_manifest(c.manifest, dir / "manifest.jsonl");

  TrainInputs in;
  in.manifest = corpus::load_manifest(dir / "manifest.jsonl");
  in.manifest_path = dir / "manifest.jsonl";
  in.embeddings = c.embeddings;
  auto model = small_model(0);
  const auto r = train::train(in, model, quick_config(2));
  CHECK(r.checkpoint.config.feat_dim == 5);
  CHECK(r.checkpoint.stats.dim() == 5);
  CHECK(r.checkpoint.config.vocab_size == r.checkpoint.vocab.size());

  // Vocabulary comes from the nine training clips only.
  const auto split = split_dev(in.manifest, 0.1, 0);
  CHECK(r.checkpoint.vocab == corpus::build_vocab(split.train));

  auto ce = quick_config(2);
  ce.loss_mode = LossMode::CeOnly;
  in.embeddings.reset();
  CHECK(train::train(in, model, ce).log.size() == 2);
  test::check_error(ErrorKind::MissingEmbedding, [&] { train::train(in, model, quick_config(1)); });
}

// SPDX-License-Identifier: Apache-2.0
#include "acap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "acap/error.hpp"
#include "acap/random.hpp"

namespace acap::train {

void TrainConfig::validate() const {
  if (!(lr > 0)) fail(ErrorKind::InvalidParam, "lr must be > 0");
  if (!(val_ratio > 0 && val_ratio < 1)) fail(ErrorKind::InvalidParam, "val_ratio must be in (0, 1)");
  if (epochs < 1) fail(ErrorKind::InvalidParam, "epochs must be >= 1");
  if (batch_size < 1) fail(ErrorKind::InvalidParam, "batch_size must be >= 1");
  if (!(alpha >= 0)) fail(ErrorKind::InvalidParam, "alpha must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
    fail(ErrorKind::InvalidParam, "Adam betas must be in [0, 1)");
  }
  if (!(clip_norm >= 0)) fail(ErrorKind::InvalidParam, "clip_norm must be >= 0");
}

Split split_dev(const corpus::Manifest& manifest, double val_ratio, std::uint64_t seed) {
  const std::size_t n = manifest.size();
  if (n < 2) fail(ErrorKind::TooFewEntries, "need at least 2 entries to split, got " + std::to_string(n));
  if (!(val_ratio > 0 && val_ratio < 1)) fail(ErrorKind::InvalidParam, "val_ratio must be in (0, 1)");
  auto n_val = static_cast<std::size_t>(std::llround(val_ratio * static_cast<double>(n)));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;

  Split s;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? s.val : s.train).push_back(manifest[i]);
  return s;
}

// ---------------------------------------------------------------------------

template <class T>
AdamState<T> AdamState<T>::zeros_like(const ModelParams<T>& p) {
  AdamState s{p, p, 0};
  s.m.set_zero();
  s.u.set_zero();
  return s;
}

namespace {

template <class T>
std::vector<std::pair<T*, std::size_t>> tensor_spans(ModelParams<T>& p) {
  std::vector<std::pair<T*, std::size_t>> out;
  p.for_each([&](const std::string&, auto& t) { out.emplace_back(t.data(), t.size()); });
  return out;
}

}  // namespace

template <class T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg) {
  auto p = tensor_spans(params);
  auto g = tensor_spans(const_cast<ModelParams<T>&>(grads));
  auto m = tensor_spans(state.m);
  auto u = tensor_spans(state.u);
  if (g.size() != p.size() || m.size() != p.size() || u.size() != p.size()) {
    fail(ErrorKind::ShapeMismatch, "Adam tensor count");
  }
  state.step += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (g[k].second != p[k].second || m[k].second != p[k].second || u[k].second != p[k].second) {
      fail(ErrorKind::ShapeMismatch, "Adam tensor size");
    }
    T* pk = p[k].first;
    const T* gk = g[k].first;
    T* mk = m[k].first;
    T* uk = u[k].first;
    for (std::size_t i = 0; i < p[k].second; ++i) {
      const double gi = gk[i];
      const double mi = b1 * mk[i] + (1.0 - b1) * gi;
      const double ui = b2 * uk[i] + (1.0 - b2) * gi * gi;
      mk[i] = static_cast<T>(mi);
      uk[i] = static_cast<T>(ui);
      const double m_hat = mi / c1;
      const double u_hat = ui / c2;
      pk[i] = static_cast<T>(pk[i] - cfg.lr * m_hat / (std::sqrt(u_hat) + cfg.adam_eps));
    }
  }
}

template <class T>
double clip_grad_norm(ModelParams<T>& grads, double max_norm) {
  double sq = 0.0;
  grads.for_each([&](const std::string&, const auto& t) {
    sq += t.template cast<double>().squaredNorm();
  });
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) grads *= static_cast<T>(max_norm / norm);
  return norm;
}

// ---------------------------------------------------------------------------

Dataset make_dataset(const corpus::Manifest& manifest, std::vector<dsp::FrameMatrix> frames,
                     const corpus::Vocabulary& vocab, const corpus::EmbeddingTable* embeddings) {
  if (frames.size() != manifest.size()) fail(ErrorKind::InvalidParam, "one feature matrix per entry");
  Dataset d;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& e = manifest[i];
    Clip clip{e.audio_id, std::move(frames[i]), {}};
    for (const auto& c : e.captions) {
      clip.references.push_back(c.tokens);
      Sample s{i, c.caption_id, corpus::encode(c.tokens, vocab), std::nullopt};
      if (embeddings) {
        if (!c.embedding_row) fail(ErrorKind::MissingEmbedding, c.caption_id);
        if (*c.embedding_row >= embeddings->count()) {
          fail(ErrorKind::MissingEmbedding, c.caption_id + " (row " +
                                                std::to_string(*c.embedding_row) + " of " +
                                                std::to_string(embeddings->count()) + ")");
        }
        s.e_ref = embeddings->rows.row(*c.embedding_row).cast<double>().transpose();
      }
      d.samples.push_back(std::move(s));
    }
    d.clips.push_back(std::move(clip));
  }
  return d;
}

std::string format_epoch_record(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "{\"epoch\": %d, \"ce\": %.9g, \"sentence\": %.9g, \"combined\": %.9g, "
                "\"val_cider\": %.9g}",
                r.epoch, r.ce, r.sentence, r.combined, r.val_cider);
  return buf;
}

namespace {

template <class T>
std::vector<metrics::Tokens> decode_all(const ModelParams<T>& params,
                                        const std::vector<Clip>& clips,
                                        const corpus::Vocabulary& vocab, int max_len) {
  std::vector<metrics::Tokens> out;
  out.reserve(clips.size());
  for (const auto& clip : clips) {
    out.push_back(model::greedy_decode(params, nn::Mat<T>(clip.frames.template cast<T>()), vocab, max_len));
  }
  return out;
}

double validation_cider(const std::vector<Clip>& val, const std::vector<metrics::Tokens>& hyps) {
  metrics::EvalCorpus corpus;
  for (std::size_t i = 0; i < val.size(); ++i) {
    corpus.items.push_back({val[i].audio_id, hyps[i], val[i].references});
  }
  return metrics::cider(corpus);
}

template <class T>
TrainResult train_impl(const Dataset& train, const std::vector<Clip>& val,
                       const corpus::Vocabulary& vocab, const dsp::FeatureStats& stats,
                       const ModelConfig& mcfg, const TrainConfig& cfg,
                       const EpochCallback& on_epoch) {
  const bool combined = cfg.loss_mode == LossMode::Combined;
  const double alpha = combined ? cfg.alpha : 0.0;

  // Frames converted once to the working precision.
  std::vector<nn::Mat<T>> frames;
  frames.reserve(train.clips.size());
  for (const auto& c : train.clips) frames.emplace_back(c.frames.template cast<T>());
  std::vector<std::optional<nn::Vec<T>>> refs;
  refs.reserve(train.samples.size());
  for (const auto& s : train.samples) {
    if (combined && !s.e_ref) fail(ErrorKind::MissingEmbedding, s.caption_id);
    if (combined) {
      if (s.e_ref->size() != mcfg.sent_emb_dim) {
        fail(ErrorKind::DimMismatch, "embedding dim " + std::to_string(s.e_ref->size()) +
                                         " vs model " + std::to_string(mcfg.sent_emb_dim));
      }
      refs.emplace_back(s.e_ref->template cast<T>());
    } else {
      refs.emplace_back(std::nullopt);
    }
  }

  Rng rng(cfg.seed);
  ModelParams<T> params = ModelParams<T>::init(mcfg, rng.next());
  AdamState<T> adam = AdamState<T>::zeros_like(params);
  ModelParams<T> grads = ModelParams<T>::zeros(mcfg);
  model::ForwardCache<T> cache;

  TrainResult result{Checkpoint{mcfg, params.template cast<float>(), vocab, stats,
                                -std::numeric_limits<double>::infinity(), 0},
                     {}};

  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const T scale = T(1) / static_cast<T>(end - start);
      grads.set_zero();
      for (std::size_t b = start; b < end; ++b) {
        const Sample& s = train.samples[order[b]];
        const model::LossReport loss =
            model::forward_loss(params, frames[s.clip], s.ids, refs[order[b]], alpha, &cache);
        if (!std::isfinite(loss.combined)) {
          fail(ErrorKind::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", caption " +
                                             s.caption_id + ": ce=" + std::to_string(loss.ce) +
                                             " sentence=" + std::to_string(loss.sentence));
        }
        rec.ce += loss.ce;
        rec.sentence += loss.sentence;
        rec.combined += loss.combined;
        model::backward(params, cache, grads, scale);
      }
      if (cfg.clip_norm > 0) clip_grad_norm(grads, cfg.clip_norm);
      adam_step(params, grads, adam, cfg);
    }
    const auto n = static_cast<double>(order.size());
    rec.ce /= n;
    rec.sentence /= n;
    rec.combined /= n;

    rec.val_cider = validation_cider(val, decode_all(params, val, vocab, mcfg.max_decode_len));
    if (rec.val_cider > result.checkpoint.best_val_cider) {
      result.checkpoint.best_val_cider = rec.val_cider;
      result.checkpoint.epoch = epoch;
      result.checkpoint.params = params.template cast<float>();
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace

TrainResult train_on(const Dataset& train, const std::vector<Clip>& val,
                     const corpus::Vocabulary& vocab, const dsp::FeatureStats& stats,
                     ModelConfig model_cfg, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.samples.empty()) fail(ErrorKind::TooFewEntries, "no training pairs");
  if (val.empty()) fail(ErrorKind::TooFewEntries, "no validation clips");
  model_cfg.vocab_size = vocab.size();
  model_cfg.alpha = cfg.loss_mode == LossMode::Combined ? cfg.alpha : 0.0;
  model_cfg.validate();
  for (const auto* clips : {&train.clips, &val}) {
    for (const auto& c : *clips) {
      if (c.frames.cols() != model_cfg.feat_dim) {
        fail(ErrorKind::DimensionMismatch, c.audio_id + " has D=" + std::to_string(c.frames.cols()) +
                                               ", model expects " + std::to_string(model_cfg.feat_dim));
      }
    }
  }
  return cfg.precision == Precision::F64
             ? train_impl<double>(train, val, vocab, stats, model_cfg, cfg, on_epoch)
             : train_impl<float>(train, val, vocab, stats, model_cfg, cfg, on_epoch);
}

TrainResult train(const TrainInputs& in, ModelConfig model_cfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  corpus::validate_manifest(in.manifest);
  const bool combined = cfg.loss_mode == LossMode::Combined;
  if (combined && !in.embeddings) fail(ErrorKind::MissingEmbedding, "combined loss needs an embedding table");
  if (combined) corpus::check_embedding_rows(in.manifest, *in.embeddings);

  const Split split = split_dev(in.manifest, cfg.val_ratio, cfg.seed);
  const auto load = [&](const corpus::Manifest& m) {
    std::vector<dsp::FeatureMatrix> out;
    out.reserve(m.size());
    for (const auto& e : m) out.push_back(dsp::read_features(corpus::resolve_feature_path(e, in.manifest_path)));
    return out;
  };
  const auto train_raw = load(split.train);
  const auto val_raw = load(split.val);
  const dsp::FeatureStats stats = in.stats ? *in.stats : dsp::compute_stats(train_raw);
  const auto standardized = [&](const std::vector<dsp::FeatureMatrix>& raw) {
    std::vector<dsp::FrameMatrix> out;
    out.reserve(raw.size());
    for (const auto& f : raw) out.push_back(dsp::standardize(f, stats).frames);
    return out;
  };

  const corpus::Vocabulary vocab = in.vocab ? *in.vocab : corpus::build_vocab(split.train);
  model_cfg.feat_dim = static_cast<int>(stats.dim());
  if (combined) model_cfg.sent_emb_dim = static_cast<int>(in.embeddings->dim());

  const Dataset train_set = make_dataset(split.train, standardized(train_raw), vocab,
                                         combined ? &*in.embeddings : nullptr);
  const Dataset val_set = make_dataset(split.val, standardized(val_raw), vocab, nullptr);
  return train_on(train_set, val_set.clips, vocab, stats, model_cfg, cfg, on_epoch);
}

std::vector<metrics::Tokens> caption_clips(const Checkpoint& ckpt,
                                           const std::vector<dsp::FrameMatrix>& frames) {
  std::vector<Clip> clips;
  clips.reserve(frames.size());
  for (const auto& f : frames) clips.push_back({"", f, {}});
  return decode_all(ckpt.params, clips, ckpt.vocab, ckpt.config.max_decode_len);
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ModelParams<float>&, const ModelParams<float>&, AdamState<float>&, const TrainConfig&);
template void adam_step(ModelParams<double>&, const ModelParams<double>&, AdamState<double>&, const TrainConfig&);
template double clip_grad_norm(ModelParams<float>&, double);
template double clip_grad_norm(ModelParams<double>&, double);

}  // namespace acap::train

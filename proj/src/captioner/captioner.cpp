// SPDX-License-Identifier: Apache-2.0
#include "acap/captioner.hpp"

#include <cmath>

#include "acap/error.hpp"
#include "acap/random.hpp"

namespace acap::model {

void ModelConfig::validate() const {
  if (feat_dim <= 0 || enc_hidden <= 0 || v_dim <= 0 || dec_hidden <= 0 || word_emb_dim <= 0 ||
      vocab_size <= 0 || sent_emb_dim <= 0 || max_decode_len <= 0) {
    fail(ErrorKind::InvalidParam, "model sizes must all be positive");
  }
  if (!(alpha >= 0.0)) fail(ErrorKind::InvalidParam, "alpha must be >= 0");
}

template <class T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.encoder = nn::GruCellParams<T>::zeros(cfg.feat_dim, cfg.enc_hidden);
  p.enc_proj = nn::AffineParams<T>::zeros(cfg.enc_hidden, cfg.v_dim);
  p.word_emb = Mat<T>::Zero(cfg.vocab_size, cfg.word_emb_dim);
  p.decoder = nn::GruCellParams<T>::zeros(cfg.word_emb_dim + cfg.v_dim, cfg.dec_hidden);
  p.out_proj = nn::AffineParams<T>::zeros(cfg.dec_hidden, cfg.vocab_size);
  p.sent_proj = nn::AffineParams<T>::zeros(cfg.dec_hidden, cfg.sent_emb_dim);
  return p;
}

template <class T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = zeros(cfg);
  Rng rng(seed);
  const double enc_bound = 1.0 / std::sqrt(static_cast<double>(cfg.enc_hidden));
  const double dec_bound = 1.0 / std::sqrt(static_cast<double>(cfg.dec_hidden));
  p.for_each([&](const std::string& name, auto& t) {
    const bool encoder_side = name.starts_with("encoder") || name.starts_with("enc_proj");
    nn::fill_uniform(t, rng, encoder_side ? enc_bound : dec_bound);
  });
  return p;
}

template <class T>
void ModelParams<T>::check(const ModelConfig& cfg) const {
  const ModelParams ref = zeros(cfg);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  ref.for_each([&](const std::string&, const auto& t) { shapes.emplace_back(t.rows(), t.cols()); });
  std::size_t i = 0;
  for_each([&](const std::string& name, const auto& t) {
    const auto [r, c] = shapes[i++];
    if (t.rows() != r || t.cols() != c) {
      fail(ErrorKind::ShapeMismatch, name + " is " + std::to_string(t.rows()) + "x" +
                                         std::to_string(t.cols()) + ", config expects " +
                                         std::to_string(r) + "x" + std::to_string(c));
    }
  });
}

template <class T>
std::size_t ModelParams<T>::num_values() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

template <class T>
std::vector<T> ModelParams<T>::flatten() const {
  std::vector<T> out;
  out.reserve(num_values());
  for_each([&](const std::string&, const auto& t) {
    out.insert(out.end(), t.data(), t.data() + t.size());
  });
  return out;
}

template <class T>
void ModelParams<T>::unflatten(std::span<const T> values) {
  if (values.size() != num_values()) fail(ErrorKind::ShapeMismatch, "flat parameter count");
  std::size_t off = 0;
  for_each([&](const std::string&, auto& t) {
    std::copy_n(values.data() + off, t.size(), t.data());
    off += static_cast<std::size_t>(t.size());
  });
}

template <class T>
template <class U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.encoder = {encoder.w_ih.template cast<U>(), encoder.w_hh.template cast<U>(),
                 encoder.b_ih.template cast<U>(), encoder.b_hh.template cast<U>()};
  out.enc_proj = {enc_proj.w.template cast<U>(), enc_proj.b.template cast<U>()};
  out.word_emb = word_emb.template cast<U>();
  out.decoder = {decoder.w_ih.template cast<U>(), decoder.w_hh.template cast<U>(),
                 decoder.b_ih.template cast<U>(), decoder.b_hh.template cast<U>()};
  out.out_proj = {out_proj.w.template cast<U>(), out_proj.b.template cast<U>()};
  out.sent_proj = {sent_proj.w.template cast<U>(), sent_proj.b.template cast<U>()};
  return out;
}

template <class T>
void ModelParams<T>::set_zero() {
  for_each([](const std::string&, auto& t) { t.setZero(); });
}

template <class T>
ModelParams<T>& ModelParams<T>::operator+=(const ModelParams& o) {
  std::vector<const T*> src;
  o.for_each([&](const std::string&, const auto& t) { src.push_back(t.data()); });
  std::size_t i = 0;
  for_each([&](const std::string&, auto& t) {
    using Tensor = std::remove_reference_t<decltype(t)>;
    t += Eigen::Map<const Tensor>(src[i++], t.rows(), t.cols());
  });
  return *this;
}

template <class T>
ModelParams<T>& ModelParams<T>::operator*=(T s) {
  for_each([s](const std::string&, auto& t) { t *= s; });
  return *this;
}

// ---------------------------------------------------------------------------

template <class T>
Vec<T> encode(const ModelParams<T>& p, const Mat<T>& frames, EncoderCache<T>* cache) {
  if (frames.rows() == 0) fail(ErrorKind::EmptySequence, "feature matrix has no frames");
  if (frames.cols() != p.encoder.input_size()) {
    fail(ErrorKind::DimensionMismatch, "features have D=" + std::to_string(frames.cols()) +
                                           ", encoder expects " +
                                           std::to_string(p.encoder.input_size()));
  }
  const auto steps = static_cast<std::size_t>(frames.rows());
  std::vector<Vec<T>> states;
  states.reserve(steps);
  if (cache) cache->steps.resize(steps);
  Vec<T> h = Vec<T>::Zero(p.encoder.hidden_size());
  for (std::size_t t = 0; t < steps; ++t) {
    const Vec<T> x = frames.row(static_cast<Eigen::Index>(t)).transpose();
    h = nn::gru_cell_forward(p.encoder, x, h, cache ? &cache->steps[t] : nullptr);
    states.push_back(h);
  }
  Vec<T> pooled = nn::mean_pool_forward<T>(states);
  Vec<T> v = nn::affine_forward(p.enc_proj, pooled);
  if (cache) {
    cache->states = std::move(states);
    cache->pooled = std::move(pooled);
  }
  return v;
}

TeacherForcing teacher_forced_tokens(std::span<const int> ids) {
  if (ids.empty()) fail(ErrorKind::EmptyCaption, "caption has no tokens");
  if (ids.back() != corpus::Vocabulary::kEos) {
    fail(ErrorKind::EmptyCaption, "encoded caption must end with EOS");
  }
  TeacherForcing tf;
  tf.inputs.push_back(corpus::Vocabulary::kSos);
  tf.inputs.insert(tf.inputs.end(), ids.begin(), ids.end() - 1);
  tf.targets.assign(ids.begin(), ids.end());
  return tf;
}

template <class T>
Vec<T> decoder_step_input(const ModelParams<T>& p, int token, const Vec<T>& v) {
  const Vec<T> emb = nn::embedding_forward(p.word_emb, token);
  Vec<T> x(emb.size() + v.size());
  x << emb, v;
  return x;
}

template <class T>
LossReport forward_loss(const ModelParams<T>& p, const Mat<T>& frames, std::span<const int> ids,
                        const std::optional<Vec<T>>& e_ref, double alpha, ForwardCache<T>* cache) {
  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c = ForwardCache<T>{};
  c.alpha = alpha;
  c.v = encode(p, frames, &c.enc);
  c.tokens = teacher_forced_tokens(ids);

  const std::size_t steps = c.tokens.inputs.size();
  c.step_inputs.reserve(steps);
  c.dec_steps.resize(steps);
  c.dec_states.reserve(steps);
  c.ce_steps.reserve(steps);

  LossReport report;
  double ce = 0.0;
  Vec<T> s = Vec<T>::Zero(p.decoder.hidden_size());
  for (std::size_t t = 0; t < steps; ++t) {
    c.step_inputs.push_back(decoder_step_input(p, c.tokens.inputs[t], c.v));
    s = nn::gru_cell_forward(p.decoder, c.step_inputs.back(), s, &c.dec_steps[t]);
    c.dec_states.push_back(s);
    const Vec<T> logits = nn::affine_forward(p.out_proj, s);
    c.ce_steps.push_back(nn::softmax_ce_forward(logits, c.tokens.targets[t]));
    ce += static_cast<double>(c.ce_steps.back().loss);
  }
  report.ce = ce;
  report.token_count = static_cast<int>(steps);

  if (e_ref) {
    if (e_ref->size() != p.sent_proj.w.rows()) {
      fail(ErrorKind::DimensionMismatch, "sentence embedding has dim " +
                                             std::to_string(e_ref->size()) + ", model expects " +
                                             std::to_string(p.sent_proj.w.rows()));
    }
    c.dec_pooled = nn::mean_pool_forward<T>(c.dec_states);
    c.e_hat = nn::affine_forward(p.sent_proj, c.dec_pooled);
    c.e_ref = *e_ref;
    c.cosine = nn::cosine_dissim_forward(c.e_hat, *e_ref);
    report.sentence = static_cast<double>(c.cosine.loss);
  }
  report.combined = combined_loss(report.ce, report.sentence, alpha);
  return report;
}

template <class T>
void backward(const ModelParams<T>& p, const ForwardCache<T>& c, ModelParams<T>& g, T scale) {
  const std::size_t steps = c.dec_states.size();
  const Eigen::Index H = p.decoder.hidden_size();
  const Eigen::Index E = p.word_emb.cols();

  // Gradient reaching each decoder state from the sentence branch.
  Vec<T> d_pooled_share = Vec<T>::Zero(H);
  if (c.e_ref && c.alpha != 0.0) {
    const Vec<T> d_e_hat =
        nn::cosine_dissim_backward(c.cosine, c.e_hat, *c.e_ref, static_cast<T>(c.alpha) * scale);
    const Vec<T> d_pooled = nn::affine_backward(p.sent_proj, c.dec_pooled, d_e_hat, g.sent_proj);
    d_pooled_share = nn::mean_pool_backward(d_pooled, steps);
  }

  Vec<T> dv = Vec<T>::Zero(c.v.size());
  Vec<T> ds_next = Vec<T>::Zero(H);
  for (std::size_t t = steps; t-- > 0;) {
    const Vec<T> dlogits = nn::softmax_ce_backward(c.ce_steps[t], c.tokens.targets[t], scale);
    Vec<T> ds = nn::affine_backward(p.out_proj, c.dec_states[t], dlogits, g.out_proj);
    ds += ds_next + d_pooled_share;
    const auto in = nn::gru_cell_backward(p.decoder, c.dec_steps[t], ds, g.decoder);
    nn::embedding_backward<T>(g.word_emb, c.tokens.inputs[t], in.dx.head(E));
    dv += in.dx.tail(c.v.size());
    ds_next = in.dh;
  }

  const Vec<T> d_enc_pooled = nn::affine_backward(p.enc_proj, c.enc.pooled, dv, g.enc_proj);
  const auto enc_steps = c.enc.states.size();
  const Vec<T> dh_share = nn::mean_pool_backward(d_enc_pooled, enc_steps);
  Vec<T> dh_next = Vec<T>::Zero(p.encoder.hidden_size());
  for (std::size_t t = enc_steps; t-- > 0;) {
    const Vec<T> dh = dh_share + dh_next;
    dh_next = nn::gru_cell_backward(p.encoder, c.enc.steps[t], dh, g.encoder).dh;
  }
}

template <class T>
std::vector<int> greedy_decode_ids(const ModelParams<T>& p, const Mat<T>& frames, int max_len) {
  using corpus::Vocabulary;
  const Vec<T> v = encode(p, frames);
  std::vector<int> out;
  Vec<T> s = Vec<T>::Zero(p.decoder.hidden_size());
  int prev = Vocabulary::kSos;
  const int vocab = static_cast<int>(p.out_proj.w.rows());
  while (static_cast<int>(out.size()) < max_len) {
    s = nn::gru_cell_forward(p.decoder, decoder_step_input(p, prev, v), s);
    const Vec<T> logits = nn::affine_forward(p.out_proj, s);
    int best = Vocabulary::kEos;
    for (int k = Vocabulary::kNumSpecials; k < vocab; ++k) {
      if (logits[k] > logits[best]) best = k;
    }
    if (best == Vocabulary::kEos) break;
    out.push_back(best);
    prev = best;
  }
  return out;
}

template <class T>
std::vector<std::string> greedy_decode(const ModelParams<T>& p, const Mat<T>& frames,
                                       const corpus::Vocabulary& vocab, int max_len) {
  if (vocab.size() != p.out_proj.w.rows()) {
    fail(ErrorKind::ShapeMismatch, "vocabulary size differs from the output layer");
  }
  const auto ids = greedy_decode_ids(p, frames, max_len);
  return corpus::decode(ids, vocab);
}

#define ACAP_INSTANTIATE(T)                                                                       \
  template struct ModelParams<T>;                                                                 \
  template Vec<T> encode(const ModelParams<T>&, const Mat<T>&, EncoderCache<T>*);                 \
  template Vec<T> decoder_step_input(const ModelParams<T>&, int, const Vec<T>&);                  \
  template LossReport forward_loss(const ModelParams<T>&, const Mat<T>&, std::span<const int>,    \
                                   const std::optional<Vec<T>>&, double, ForwardCache<T>*);       \
  template void backward(const ModelParams<T>&, const ForwardCache<T>&, ModelParams<T>&, T);      \
  template std::vector<int> greedy_decode_ids(const ModelParams<T>&, const Mat<T>&, int);         \
  template std::vector<std::string> greedy_decode(const ModelParams<T>&, const Mat<T>&,           \
                                                  const corpus::Vocabulary&, int);

ACAP_INSTANTIATE(float)
ACAP_INSTANTIATE(double)
#undef ACAP_INSTANTIATE

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace acap::model

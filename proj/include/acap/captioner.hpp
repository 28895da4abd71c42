// SPDX-License-Identifier: Apache-2.0
//
// GRU encoder-decoder captioner.
//
// Encoder: GRU over the T x D feature frames from a zero state, mean-pooled
// over time and projected to the audio embedding v.
// Decoder: GRU whose step input is [word_emb(prev token); v]; teacher forced
// during training with inputs [SOS, w1 .. w_{L-1}] and targets [w1 .. w_L=EOS].
// Objective per caption:
//   ce        = sum_t -log p(target_t)
//   e_hat     = sent_proj(mean_t s_t)            (s_t: decoder hidden states)
//   sentence  = 1 - e_S . e_hat / max(|e_S| |e_hat|, eps)
//   combined  = ce + alpha * sentence
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acap/numcore.hpp"
#include "acap/vocabulary.hpp"

namespace acap::model {

using nn::Mat;
using nn::Vec;

struct ModelConfig {
  int feat_dim = 64;
  int enc_hidden = 512;
  int v_dim = 256;
  int dec_hidden = 512;
  int word_emb_dim = 256;
  int vocab_size = 0;
  int sent_emb_dim = 768;
  double alpha = 10.0;
  int max_decode_len = 50;

  /// Throws InvalidParam on non-positive sizes or negative alpha.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct ModelParams {
  nn::GruCellParams<T> encoder;
  nn::AffineParams<T> enc_proj;   // enc_hidden -> v_dim
  Mat<T> word_emb;                // vocab_size x word_emb_dim
  nn::GruCellParams<T> decoder;   // input word_emb_dim + v_dim
  nn::AffineParams<T> out_proj;   // dec_hidden -> vocab_size
  nn::AffineParams<T> sent_proj;  // dec_hidden -> sent_emb_dim

  static ModelParams zeros(const ModelConfig& cfg);
  /// Every entry uniform in (-1/sqrt(H), 1/sqrt(H)), H being the hidden size of
  /// the GRU the tensor belongs to or reads from. Fill order follows for_each.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  /// Visits (name, tensor) in a fixed order; tensors are Mat<T> or Vec<T>.
  template <class F>
  void for_each(F&& f) {
    encoder.for_each("encoder", f);
    enc_proj.for_each("enc_proj", f);
    f(std::string("word_emb"), word_emb);
    decoder.for_each("decoder", f);
    out_proj.for_each("out_proj", f);
    sent_proj.for_each("sent_proj", f);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each([&](const std::string& name, const auto& t) { f(name, t); });
  }

  /// Throws ShapeMismatch naming the first tensor inconsistent with cfg.
  void check(const ModelConfig& cfg) const;

  std::size_t num_values() const;
  /// Flattened copy / write-back in for_each order (column-major per tensor).
  std::vector<T> flatten() const;
  void unflatten(std::span<const T> values);

  template <class U>
  ModelParams<U> cast() const;

  void set_zero();
  ModelParams& operator+=(const ModelParams& o);
  ModelParams& operator*=(T s);
};

template <class T>
struct EncoderCache {
  std::vector<nn::GruCache<T>> steps;
  std::vector<Vec<T>> states;
  Vec<T> pooled;
};

/// frames: T x feat_dim, one row per frame.
template <class T>
Vec<T> encode(const ModelParams<T>& p, const Mat<T>& frames, EncoderCache<T>* cache = nullptr);

struct TeacherForcing {
  std::vector<int> inputs;   // [SOS, w1, ..., w_{L-1}]
  std::vector<int> targets;  // [w1, ..., w_L = EOS]
};

/// `ids` is an encoded caption ending in EOS. Throws EmptyCaption.
TeacherForcing teacher_forced_tokens(std::span<const int> ids);

/// Step input [word_emb(token); v].
template <class T>
Vec<T> decoder_step_input(const ModelParams<T>& p, int token, const Vec<T>& v);

struct LossReport {
  double ce = 0.0;
  double sentence = 0.0;
  double combined = 0.0;
  int token_count = 0;
};

template <class T>
struct ForwardCache {
  EncoderCache<T> enc;
  Vec<T> v;
  TeacherForcing tokens;
  std::vector<Vec<T>> step_inputs;
  std::vector<nn::GruCache<T>> dec_steps;
  std::vector<Vec<T>> dec_states;
  std::vector<nn::SoftmaxCe<T>> ce_steps;
  Vec<T> dec_pooled;
  Vec<T> e_hat;
  std::optional<Vec<T>> e_ref;
  nn::CosineCache<T> cosine{};
  double alpha = 0.0;
};

inline double combined_loss(double ce, double sentence, double alpha) { return ce + alpha * sentence; }

/// Teacher-forced forward pass. Without `e_ref` the sentence term is 0 and
/// contributes no gradient (cross-entropy-only training).
template <class T>
LossReport forward_loss(const ModelParams<T>& p, const Mat<T>& frames, std::span<const int> ids,
                        const std::optional<Vec<T>>& e_ref, double alpha,
                        ForwardCache<T>* cache = nullptr);

/// Accumulates scale * d(combined)/d(theta) into grads.
template <class T>
void backward(const ModelParams<T>& p, const ForwardCache<T>& cache, ModelParams<T>& grads,
              T scale = T(1));

/// Argmax decoding from SOS until EOS or max_len tokens. Only EOS and surface
/// token ids compete in the argmax; ties go to the smallest id. The returned
/// ids exclude EOS.
template <class T>
std::vector<int> greedy_decode_ids(const ModelParams<T>& p, const Mat<T>& frames, int max_len);

template <class T>
std::vector<std::string> greedy_decode(const ModelParams<T>& p, const Mat<T>& frames,
                                       const corpus::Vocabulary& vocab, int max_len = 50);

}  // namespace acap::model

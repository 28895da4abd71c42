// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "acap/captioner.hpp"
#include "acap/embeddings.hpp"
#include "acap/features.hpp"
#include "acap/manifest.hpp"
#include "acap/metrics.hpp"
#include "acap/vocabulary.hpp"

namespace acap::train {

using model::ModelConfig;
using model::ModelParams;

enum class LossMode { CeOnly, Combined };
enum class Precision { F32, F64 };

struct TrainConfig {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int epochs = 25;
  double alpha = 10.0;
  double val_ratio = 0.1;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::Combined;
  Precision precision = Precision::F32;
  double clip_norm = 0.0;  ///< global L2 gradient clipping; 0 disables

  void validate() const;
};

// ---------------------------------------------------------------------------
// Train / validation split

struct Split {
  corpus::Manifest train;
  corpus::Manifest val;
};

/// Partitions whole entries (never individual captions). |val| is
/// round(val_ratio * N) clamped to [1, N - 1]; both sides keep manifest order.
Split split_dev(const corpus::Manifest& manifest, double val_ratio, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Adam

template <class T>
struct AdamState {
  ModelParams<T> m;
  ModelParams<T> u;
  long step = 0;

  static AdamState zeros_like(const ModelParams<T>& p);
};

template <class T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg);

/// Scales grads in place so their global L2 norm is at most max_norm; returns
/// the norm before scaling.
template <class T>
double clip_grad_norm(ModelParams<T>& grads, double max_norm);

// ---------------------------------------------------------------------------
// Checkpoint

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
  corpus::Vocabulary vocab;
  dsp::FeatureStats stats;
  double best_val_cider = 0.0;
  int epoch = 0;  ///< 1-based epoch the stored parameters come from
};

// "ACKP", u32 version=1, model config, epoch, best CIDEr, named tensor blocks
// (name, u32 rank, u32 dims..., float32 row-major payload), vocabulary, stats.
std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const char> bytes,
                             const std::optional<ModelConfig>& expected = std::nullopt);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

// ---------------------------------------------------------------------------
// Training

/// A standardized clip with its reference captions.
struct Clip {
  std::string audio_id;
  dsp::FrameMatrix frames;
  std::vector<metrics::Tokens> references;
};

/// One (audio, caption) training pair.
struct Sample {
  std::size_t clip = 0;
  std::string caption_id;
  std::vector<int> ids;  ///< encoded, ends with EOS
  std::optional<Eigen::VectorXd> e_ref;
};

struct Dataset {
  std::vector<Clip> clips;
  std::vector<Sample> samples;
};

/// Builds training pairs for every caption. With `embeddings` every caption
/// must carry an embedding_row (MissingEmbedding otherwise).
Dataset make_dataset(const corpus::Manifest& manifest, std::vector<dsp::FrameMatrix> frames,
                     const corpus::Vocabulary& vocab, const corpus::EmbeddingTable* embeddings);

struct EpochRecord {
  int epoch = 0;
  double ce = 0.0;        ///< mean per-caption CE over the epoch's updates
  double sentence = 0.0;
  double combined = 0.0;
  double val_cider = 0.0;
};

std::string format_epoch_record(const EpochRecord& r);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs the epochs on prepared data; validation CIDEr (greedy decoding, IDF
/// from the validation references) selects the stored parameters.
TrainResult train_on(const Dataset& train, const std::vector<Clip>& val,
                     const corpus::Vocabulary& vocab, const dsp::FeatureStats& stats,
                     ModelConfig model_cfg, const TrainConfig& cfg,
                     const EpochCallback& on_epoch = {});

struct TrainInputs {
  corpus::Manifest manifest;
  std::filesystem::path manifest_path;              ///< resolves relative feature paths
  std::optional<corpus::EmbeddingTable> embeddings;  ///< required for Combined
  std::optional<corpus::Vocabulary> vocab;          ///< default: built from the train split
  std::optional<dsp::FeatureStats> stats;           ///< default: from the train split
};

/// Full recipe: split, load and standardize features, build pairs, train.
/// `model_cfg.feat_dim` and `vocab_size` are filled in from the data.
TrainResult train(const TrainInputs& inputs, ModelConfig model_cfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Greedy captions for standardized clips with checkpoint parameters.
std::vector<metrics::Tokens> caption_clips(const Checkpoint& ckpt,
                                           const std::vector<dsp::FrameMatrix>& frames);

}  // namespace acap::train

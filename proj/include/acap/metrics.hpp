// SPDX-License-Identifier: Apache-2.0
//
// Corpus-level multi-reference caption metrics. Tokens are compared verbatim.
//
//  BLEU@n   cumulative, corpus level: clipped n-gram counts summed over items,
//           uniform geometric mean over 1..n, brevity penalty exp(1 - r/c)
//           when c < r (r sums the closest reference length per item, ties to
//           the shorter). No smoothing.
//  ROUGE-L  per item max over references of the LCS F-measure (beta = 1.2),
//           averaged over items.
//  CIDEr    n = 1..4 TF-IDF vectors, IDF = log(M / max(df, 1)) over the item
//           reference sets, cosine times exp(-(|h|-|r|)^2 / (2 * 6^2)),
//           averaged over references and n, times 10, averaged over items.
//  Richness distinct predictions / predictions.
#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace acap::metrics {

using Tokens = std::vector<std::string>;

struct EvalItem {
  std::string audio_id;
  Tokens hypothesis;
  std::vector<Tokens> references;
};

struct EvalCorpus {
  std::vector<EvalItem> items;

  /// Throws EmptyCorpus, InvalidParam (no references) or DuplicateAudioId.
  void validate() const;
};

struct BleuDetail {
  std::array<double, 4> precision{};  ///< p_1 .. p_max_n (unused slots 0)
  double brevity_penalty = 0.0;
  double hyp_length = 0.0;
  double ref_length = 0.0;
  double score = 0.0;
};

BleuDetail bleu_detail(const EvalCorpus& corpus, int max_n);
double bleu(const EvalCorpus& corpus, int max_n);

/// Longest common subsequence length.
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
double rouge_l(const EvalCorpus& corpus, double beta = 1.2);

struct CiderOptions {
  double sigma = 6.0;
  bool scale10 = true;  ///< false reproduces the raw (unscaled) variant
};
double cider(const EvalCorpus& corpus, const CiderOptions& opt = {});

double richness(std::span<const Tokens> hypotheses);

struct ScoreReport {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double rouge_l = 0;
  double cider = 0;
  double richness = 0;

  friend bool operator==(const ScoreReport&, const ScoreReport&) = default;
};

ScoreReport evaluate(const EvalCorpus& corpus, const CiderOptions& opt = {});

/// {"bleu1": 0.123456, ..., "richness": 1.000000}, six decimals.
std::string format_report(const ScoreReport& r);

/// Line-delimited {audio_id, hypothesis:[tokens], references:[[tokens], ...]}.
EvalCorpus parse_eval_corpus(std::string_view text);
EvalCorpus load_eval_corpus(const std::filesystem::path& path);

}  // namespace acap::metrics

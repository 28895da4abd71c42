// SPDX-License-Identifier: Apache-2.0
#include "acap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <map>
#include <numeric>
#include <set>

#include "acap/binary_io.hpp"
#include "acap/error.hpp"

namespace acap::metrics {

namespace {

using NgramCounts = std::map<std::string, double>;

std::string ngram_key(std::span<const std::string> tokens, std::size_t start, int n) {
  std::string key;
  for (int i = 0; i < n; ++i) {
    if (i) key += '\x1f';
    key += tokens[start + static_cast<std::size_t>(i)];
  }
  return key;
}

NgramCounts count_ngrams(std::span<const std::string> tokens, int n) {
  NgramCounts counts;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= tokens.size(); ++i) counts[ngram_key(tokens, i, n)] += 1.0;
  return counts;
}

// Summing sorted values makes corpus means independent of item order.
double order_free_mean(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

void require_items(const EvalCorpus& corpus) {
  if (corpus.items.empty()) fail(ErrorKind::EmptyCorpus, "evaluation corpus has no items");
  for (const auto& item : corpus.items) {
    if (item.references.empty()) {
      fail(ErrorKind::InvalidParam, "item " + item.audio_id + " has no references");
    }
  }
}

}  // namespace

void EvalCorpus::validate() const {
  require_items(*this);
  std::set<std::string> ids;
  for (const auto& item : items) {
    if (!ids.insert(item.audio_id).second) fail(ErrorKind::DuplicateAudioId, item.audio_id);
  }
}

BleuDetail bleu_detail(const EvalCorpus& corpus, int max_n) {
  if (max_n < 1 || max_n > 4) fail(ErrorKind::InvalidParam, "BLEU order must be 1..4");
  require_items(corpus);

  std::array<double, 4> matched{};
  std::array<double, 4> total{};
  BleuDetail d;
  for (const auto& item : corpus.items) {
    const double c = static_cast<double>(item.hypothesis.size());
    d.hyp_length += c;
    // Closest reference length, ties resolved to the shorter one.
    double best = -1.0;
    for (const auto& ref : item.references) {
      const double r = static_cast<double>(ref.size());
      if (best < 0 || std::abs(r - c) < std::abs(best - c) ||
          (std::abs(r - c) == std::abs(best - c) && r < best)) {
        best = r;
      }
    }
    d.ref_length += best;

    for (int n = 1; n <= max_n; ++n) {
      const NgramCounts hyp = count_ngrams(item.hypothesis, n);
      NgramCounts max_ref;
      for (const auto& ref : item.references) {
        for (const auto& [g, cnt] : count_ngrams(ref, n)) {
          auto& slot = max_ref[g];
          slot = std::max(slot, cnt);
        }
      }
      for (const auto& [g, cnt] : hyp) {
        const auto it = max_ref.find(g);
        matched[n - 1] += std::min(cnt, it == max_ref.end() ? 0.0 : it->second);
        total[n - 1] += cnt;
      }
    }
  }

  double log_sum = 0.0;
  bool zero = d.hyp_length == 0.0;
  for (int n = 0; n < max_n; ++n) {
    d.precision[n] = total[n] > 0 ? matched[n] / total[n] : 0.0;
    if (d.precision[n] == 0.0) zero = true;
    else log_sum += std::log(d.precision[n]);
  }
  d.brevity_penalty = d.hyp_length == 0.0         ? 0.0
                      : d.hyp_length < d.ref_length ? std::exp(1.0 - d.ref_length / d.hyp_length)
                                                    : 1.0;
  d.score = zero ? 0.0 : d.brevity_penalty * std::exp(log_sum / max_n);
  return d;
}

double bleu(const EvalCorpus& corpus, int max_n) { return bleu_detail(corpus, max_n).score; }

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const EvalCorpus& corpus, double beta) {
  require_items(corpus);
  const double b2 = beta * beta;
  std::vector<double> scores;
  scores.reserve(corpus.items.size());
  for (const auto& item : corpus.items) {
    double best = 0.0;
    for (const auto& ref : item.references) {
      const auto lcs = static_cast<double>(lcs_length(item.hypothesis, ref));
      if (lcs == 0.0) continue;
      const double p = lcs / static_cast<double>(item.hypothesis.size());
      const double r = lcs / static_cast<double>(ref.size());
      best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
    }
    scores.push_back(best);
  }
  return order_free_mean(std::move(scores));
}

double cider(const EvalCorpus& corpus, const CiderOptions& opt) {
  require_items(corpus);
  const double m = static_cast<double>(corpus.items.size());

  std::array<std::map<std::string, double>, 4> df;
  for (const auto& item : corpus.items) {
    for (int n = 1; n <= 4; ++n) {
      std::set<std::string> seen;
      for (const auto& ref : item.references) {
        for (const auto& [g, cnt] : count_ngrams(ref, n)) seen.insert(g);
      }
      for (const auto& g : seen) df[n - 1][g] += 1.0;
    }
  }

  const auto weigh = [&](const NgramCounts& counts, int n) {
    NgramCounts vec;
    for (const auto& [g, tf] : counts) {
      const auto it = df[n - 1].find(g);
      const double d = it == df[n - 1].end() ? 1.0 : std::max(1.0, it->second);
      vec[g] = tf * std::log(m / d);
    }
    return vec;
  };
  const auto norm = [](const NgramCounts& v) {
    double s = 0.0;
    for (const auto& [g, x] : v) s += x * x;
    return std::sqrt(s);
  };

  std::vector<double> scores;
  scores.reserve(corpus.items.size());
  const double two_sigma2 = 2.0 * opt.sigma * opt.sigma;
  for (const auto& item : corpus.items) {
    double sum_n = 0.0;
    for (int n = 1; n <= 4; ++n) {
      const NgramCounts hyp = weigh(count_ngrams(item.hypothesis, n), n);
      const double hyp_norm = norm(hyp);
      double sum_ref = 0.0;
      for (const auto& ref_tokens : item.references) {
        const NgramCounts ref = weigh(count_ngrams(ref_tokens, n), n);
        const double ref_norm = norm(ref);
        double cos = 0.0;
        if (hyp_norm > 0.0 && ref_norm > 0.0) {
          double dot = 0.0;
          for (const auto& [g, x] : hyp) {
            const auto it = ref.find(g);
            if (it != ref.end()) dot += x * it->second;
          }
          cos = dot / (hyp_norm * ref_norm);
        }
        const double delta =
            static_cast<double>(item.hypothesis.size()) - static_cast<double>(ref_tokens.size());
        sum_ref += cos * std::exp(-delta * delta / two_sigma2);
      }
      sum_n += sum_ref / static_cast<double>(item.references.size());
    }
    scores.push_back((opt.scale10 ? 10.0 : 1.0) * sum_n / 4.0);
  }
  return order_free_mean(std::move(scores));
}

double richness(std::span<const Tokens> hypotheses) {
  if (hypotheses.empty()) fail(ErrorKind::EmptyList, "richness of zero predictions");
  const std::set<Tokens> distinct(hypotheses.begin(), hypotheses.end());
  return static_cast<double>(distinct.size()) / static_cast<double>(hypotheses.size());
}

ScoreReport evaluate(const EvalCorpus& corpus, const CiderOptions& opt) {
  corpus.validate();
  ScoreReport r;
  r.bleu1 = bleu(corpus, 1);
  r.bleu2 = bleu(corpus, 2);
  r.bleu3 = bleu(corpus, 3);
  r.bleu4 = bleu(corpus, 4);
  r.rouge_l = rouge_l(corpus);
  r.cider = cider(corpus, opt);
  std::vector<Tokens> hyps;
  hyps.reserve(corpus.items.size());
  for (const auto& item : corpus.items) hyps.push_back(item.hypothesis);
  r.richness = richness(hyps);
  return r;
}

std::string format_report(const ScoreReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "{\"bleu1\": %.6f, \"bleu2\": %.6f, \"bleu3\": %.6f, \"bleu4\": %.6f, "
                "\"rouge_l\": %.6f, \"cider\": %.6f, \"richness\": %.6f}",
                r.bleu1, r.bleu2, r.bleu3, r.bleu4, r.rouge_l, r.cider, r.richness);
  return buf;
}

EvalCorpus parse_eval_corpus(std::string_view text) {
  using Json = nlohmann::json;
  EvalCorpus corpus;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  const auto line_error = [&](ErrorKind kind, const std::string& msg) {
    fail(kind, "line " + std::to_string(line_no) + ": " + msg);
  };
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    Json obj;
    try {
      obj = Json::parse(line);
      EvalItem item;
      if (!obj.contains("audio_id")) line_error(ErrorKind::MissingField, "audio_id");
      if (!obj.contains("hypothesis")) line_error(ErrorKind::MissingField, "hypothesis");
      if (!obj.contains("references")) line_error(ErrorKind::MissingField, "references");
      item.audio_id = obj.at("audio_id").get<std::string>();
      item.hypothesis = obj.at("hypothesis").get<Tokens>();
      item.references = obj.at("references").get<std::vector<Tokens>>();
      if (item.references.empty()) line_error(ErrorKind::MissingField, "references");
      corpus.items.push_back(std::move(item));
    } catch (const Json::exception& e) {
      line_error(ErrorKind::ParseError, e.what());
    }
  }
  corpus.validate();
  return corpus;
}

EvalCorpus load_eval_corpus(const std::filesystem::path& path) {
  return parse_eval_corpus(io::read_text(path));
}

}  // namespace acap::metrics

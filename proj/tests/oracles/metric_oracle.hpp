// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference metrics used only by tests. Deliberately naive: n-grams
// are token vectors found by linear scan, vectors are dense over an explicit
// n-gram list, LCS is a full table. Shares no code with src/metrics.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace oracle {

using Sent = std::vector<std::string>;

struct Item {
  Sent hyp;
  std::vector<Sent> refs;
};

inline std::vector<Sent> ngrams(const Sent& s, int n) {
  std::vector<Sent> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) {
    out.emplace_back(s.begin() + i, s.begin() + i + n);
  }
  return out;
}

inline int count_of(const std::vector<Sent>& grams, const Sent& g) {
  return static_cast<int>(std::count(grams.begin(), grams.end(), g));
}

inline std::vector<Sent> unique(std::vector<Sent> xs) {
  std::vector<Sent> out;
  for (auto& x : xs) {
    if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
  }
  return out;
}

inline double bleu(const std::vector<Item>& items, int max_n) {
  double c = 0, r = 0;
  std::vector<double> num(max_n, 0), den(max_n, 0);
  for (const auto& it : items) {
    c += it.hyp.size();
    // closest ref length, shorter on ties
    std::vector<int> lens;
    for (const auto& ref : it.refs) lens.push_back(static_cast<int>(ref.size()));
    std::sort(lens.begin(), lens.end());
    int best = lens[0];
    for (int l : lens) {
      if (std::abs(l - static_cast<int>(it.hyp.size())) < std::abs(best - static_cast<int>(it.hyp.size()))) best = l;
    }
    r += best;
    for (int n = 1; n <= max_n; ++n) {
      const auto hg = ngrams(it.hyp, n);
      for (const auto& g : unique(hg)) {
        int max_ref = 0;
        for (const auto& ref : it.refs) max_ref = std::max(max_ref, count_of(ngrams(ref, n), g));
        num[n - 1] += std::min(count_of(hg, g), max_ref);
      }
      den[n - 1] += hg.size();
    }
  }
  double prod = 1.0;
  for (int n = 0; n < max_n; ++n) {
    if (den[n] == 0 || num[n] == 0) return 0.0;
    prod *= num[n] / den[n];
  }
  const double bp = c == 0 ? 0.0 : (c < r ? std::exp(1.0 - r / c) : 1.0);
  return bp * std::pow(prod, 1.0 / max_n);
}

inline int lcs(const Sent& a, const Sent& b) {
  std::vector<std::vector<int>> t(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (size_t i = 1; i <= a.size(); ++i)
    for (size_t j = 1; j <= b.size(); ++j)
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
  return t[a.size()][b.size()];
}

inline double rouge_l(const std::vector<Item>& items, double beta = 1.2) {
  double total = 0;
  for (const auto& it : items) {
    double best = 0;
    for (const auto& ref : it.refs) {
      const int l = lcs(it.hyp, ref);
      if (l == 0) continue;
      const double p = double(l) / it.hyp.size(), rr = double(l) / ref.size();
      best = std::max(best, (1 + beta * beta) * p * rr / (rr + beta * beta * p));
    }
    total += best;
  }
  return total / items.size();
}

inline double cider(const std::vector<Item>& items, bool scale10 = true, double sigma = 6.0) {
  const double m = items.size();
  double total = 0;
  std::vector<double> item_scores(items.size(), 0.0);
  for (int n = 1; n <= 4; ++n) {
    // Every n-gram appearing anywhere (hypotheses and references).
    std::vector<Sent> vocab;
    for (const auto& it : items) {
      for (auto& g : ngrams(it.hyp, n)) vocab.push_back(g);
      for (const auto& ref : it.refs)
        for (auto& g : ngrams(ref, n)) vocab.push_back(g);
    }
    vocab = unique(vocab);
    std::vector<double> idf(vocab.size());
    for (size_t k = 0; k < vocab.size(); ++k) {
      int df = 0;
      for (const auto& it : items) {
        bool in_any = false;
        for (const auto& ref : it.refs) in_any = in_any || count_of(ngrams(ref, n), vocab[k]) > 0;
        df += in_any;
      }
      idf[k] = std::log(m / std::max(df, 1));
    }
    const auto vec = [&](const Sent& s) {
      std::vector<double> v(vocab.size());
      const auto g = ngrams(s, n);
      for (size_t k = 0; k < vocab.size(); ++k) v[k] = count_of(g, vocab[k]) * idf[k];
      return v;
    };
    for (size_t i = 0; i < items.size(); ++i) {
      const auto h = vec(items[i].hyp);
      double acc = 0;
      for (const auto& ref : items[i].refs) {
        const auto r = vec(ref);
        double dot = 0, nh = 0, nr = 0;
        for (size_t k = 0; k < vocab.size(); ++k) {
          dot += h[k] * r[k];
          nh += h[k] * h[k];
          nr += r[k] * r[k];
        }
        const double cos = (nh > 0 && nr > 0) ? dot / (std::sqrt(nh) * std::sqrt(nr)) : 0.0;
        const double d = double(items[i].hyp.size()) - double(ref.size());
        acc += cos * std::exp(-d * d / (2 * sigma * sigma));
      }
      item_scores[i] += acc / items[i].refs.size() / 4.0;
    }
  }
  for (double s : item_scores) total += (scale10 ? 10.0 : 1.0) * s;
  return total / m;
}

}  // namespace oracle

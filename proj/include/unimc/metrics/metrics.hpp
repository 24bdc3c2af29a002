#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "unimc/error.hpp"

namespace unimc::metrics {

/// Binary F1 with class 1 as positive; 0 when precision + recall is 0.
inline double bf1(std::span<const int> predictions, std::span<const int> gold) {
  if (predictions.size() != gold.size()) {
    throw Error(detail::concat("bf1: ", predictions.size(), " predictions vs ", gold.size(), " labels"));
  }
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predictions[i] && gold[i]) ++tp;
    else if (predictions[i]) ++fp;
    else if (gold[i]) ++fn;
  }
  const double p = tp + fp > 0 ? tp / (tp + fp) : 0;
  const double r = tp + fn > 0 ? tp / (tp + fn) : 0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0;
}

template <class Tok>
std::map<std::vector<Tok>, int> ngram_counts(std::span<const Tok> seq, std::size_t n) {
  std::map<std::vector<Tok>, int> out;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++out[std::vector<Tok>(seq.begin() + i, seq.begin() + i + n)];
  return out;
}

inline double f_measure(double overlap, double cand_total, double ref_total) {
  if (overlap == 0 || cand_total == 0 || ref_total == 0) return 0;
  const double p = overlap / cand_total, r = overlap / ref_total;
  return 2 * p * r / (p + r);
}

namespace detail_metrics {
inline void warn_empty_reference(const char* what) {
  std::cerr << "warning: " << what << " called with an empty reference; returning 0\n";
}
}  // namespace detail_metrics

/// Rouge-N F-measure with clipped n-gram overlap.
template <class Tok>
double rouge_n(std::span<const Tok> candidate, std::span<const Tok> reference, std::size_t n) {
  if (reference.empty()) {
    detail_metrics::warn_empty_reference("rouge_n");
    return 0;
  }
  const auto c = ngram_counts(candidate, n), r = ngram_counts(reference, n);
  double overlap = 0, ct = 0, rt = 0;
  for (const auto& [g, k] : c) {
    ct += k;
    if (auto it = r.find(g); it != r.end()) overlap += std::min(k, it->second);
  }
  for (const auto& kv : r) rt += kv.second;
  return f_measure(overlap, ct, rt);
}

template <class Tok>
std::size_t lcs_length(std::span<const Tok> a, std::span<const Tok> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Rouge-L F-measure over the longest common subsequence.
template <class Tok>
double rouge_l(std::span<const Tok> candidate, std::span<const Tok> reference) {
  if (reference.empty()) {
    detail_metrics::warn_empty_reference("rouge_l");
    return 0;
  }
  return f_measure(double(lcs_length(candidate, reference)), double(candidate.size()), double(reference.size()));
}

/// Individual BLEU-n: clipped n-gram precision times the brevity penalty.
template <class Tok>
double bleu_n(std::span<const Tok> candidate, std::span<const Tok> reference, std::size_t n) {
  if (candidate.size() < n || candidate.empty()) return 0;
  const auto c = ngram_counts(candidate, n), r = ngram_counts(reference, n);
  double clipped = 0, total = 0;
  for (const auto& [g, k] : c) {
    total += k;
    if (auto it = r.find(g); it != r.end()) clipped += std::min(k, it->second);
  }
  const double bp = candidate.size() >= reference.size()
                        ? 1.0
                        : std::exp(1.0 - double(reference.size()) / double(candidate.size()));
  return bp * clipped / total;
}

/// Unique n-grams over total n-grams, pooled across responses.
template <class Tok>
double distinct_n(const std::vector<std::vector<Tok>>& responses, std::size_t n) {
  std::set<std::vector<Tok>> unique;
  double total = 0;
  for (const auto& r : responses) {
    for (std::size_t i = 0; i + n <= r.size(); ++i) {
      unique.insert(std::vector<Tok>(r.begin() + i, r.begin() + i + n));
      ++total;
    }
  }
  return total > 0 ? double(unique.size()) / total : 0;
}

/// Bag-of-tokens F1.
template <class Tok>
double unigram_f1(std::span<const Tok> candidate, std::span<const Tok> reference) {
  std::map<Tok, int> c, r;
  for (const auto& t : candidate) ++c[t];
  for (const auto& t : reference) ++r[t];
  double overlap = 0;
  for (const auto& [t, k] : c)
    if (auto it = r.find(t); it != r.end()) overlap += std::min(k, it->second);
  return f_measure(overlap, double(candidate.size()), double(reference.size()));
}

/// Pairwise AUC: P(pos > neg) with ties counted one half.
inline double auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw Error("auc: needs at least one positive and one negative score");
  std::vector<double> n(neg.begin(), neg.end());
  std::sort(n.begin(), n.end());
  // wins + ties/2 is an exact multiple of 0.5, so one rounding happens at the division
  double credit = 0;
  for (double p : pos) {
    const auto lo = std::lower_bound(n.begin(), n.end(), p);
    const auto hi = std::upper_bound(n.begin(), n.end(), p);
    credit += double(lo - n.begin()) + 0.5 * double(hi - lo);
  }
  return credit / (double(pos.size()) * double(n.size()));
}

/// 1 if any positive id is among the first k ranked ids.
template <class Id>
double hit_at_k(std::span<const Id> ranked, const std::set<Id>& positives, std::size_t k) {
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i)
    if (positives.count(ranked[i])) return 1;
  return 0;
}

/// Mean per-sample hit@k.
template <class Id>
double recall_at_k(const std::vector<std::vector<Id>>& ranked, const std::vector<std::set<Id>>& positives,
                   std::size_t k) {
  if (ranked.size() != positives.size()) throw Error("recall_at_k: ranked lists and positive sets differ in count");
  if (ranked.empty()) return 0;
  double hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) hits += hit_at_k<Id>(ranked[i], positives[i], k);
  return hits / double(ranked.size());
}

/// exp(total NLL / tokens).
inline double perplexity_from_nll(double total_nll, std::size_t tokens) {
  if (tokens == 0) throw Error("perplexity: no tokens");
  return std::exp(total_nll / double(tokens));
}

struct EvalReport {
  std::optional<double> bf1, rouge_1, rouge_2, rouge_l, exact_match;
  std::optional<double> auc, recall_at_k;
  std::optional<double> ppl, nll, bleu_1, bleu_2, distinct_1, distinct_2, unigram_f1;
  std::size_t samples = 0;

  /// Named values in a fixed order, absent fields skipped.
  std::vector<std::pair<std::string, double>> fields() const {
    std::vector<std::pair<std::string, double>> out;
    auto put = [&](const char* n, const std::optional<double>& v) {
      if (v) out.emplace_back(n, *v);
    };
    put("bf1", bf1);
    put("rouge_1", rouge_1);
    put("rouge_2", rouge_2);
    put("rouge_l", rouge_l);
    put("exact_match", exact_match);
    put("auc", auc);
    put("recall_at_5", recall_at_k);
    put("ppl", ppl);
    put("nll", nll);
    put("bleu_1", bleu_1);
    put("bleu_2", bleu_2);
    put("distinct_1", distinct_1);
    put("distinct_2", distinct_2);
    put("unigram_f1", unigram_f1);
    return out;
  }

  /// One flat record: `name=value` pairs separated by spaces.
  std::string to_string() const {
    std::string s;
    for (const auto& [n, v] : fields()) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s=%.6f", n.c_str(), v);
      if (!s.empty()) s += ' ';
      s += buf;
    }
    return s;
  }
};

}  // namespace unimc::metrics

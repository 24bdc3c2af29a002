#include <gtest/gtest.h>

#include <random>

#include "unimc/metrics/metrics.hpp"

using namespace unimc;
using W = std::vector<std::string>;

namespace {

W w(const std::string& s) {
  W out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double s = 0;
  for (double p : pos)
    for (double n : neg) s += p > n ? 1.0 : p == n ? 0.5 : 0.0;
  return s / (double(pos.size()) * double(neg.size()));
}

}  // namespace

TEST(Bf1, HandExamples) {
  const std::vector<int> pred = {1, 1, 1, 0, 0}, gold = {1, 1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(metrics::bf1(pred, gold), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(metrics::bf1(gold, gold), 1.0);
  const std::vector<int> none = {0, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(metrics::bf1(none, gold), 0.0);
  const std::vector<int> shorter = {1};
  EXPECT_THROW(metrics::bf1(shorter, gold), Error);
}

TEST(Rouge, HandExamples) {
  const auto abc = w("a b c"), abd = w("a b d"), xyz = w("x y z");
  EXPECT_DOUBLE_EQ(metrics::rouge_n<std::string>(abc, abc, 1), 1.0);
  EXPECT_DOUBLE_EQ(metrics::rouge_n<std::string>(abc, abc, 2), 1.0);
  EXPECT_DOUBLE_EQ(metrics::rouge_l<std::string>(abc, abc), 1.0);
  EXPECT_DOUBLE_EQ(metrics::rouge_n<std::string>(abc, abd, 1), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(metrics::rouge_n<std::string>(abc, abd, 2), 0.5);
  EXPECT_DOUBLE_EQ(metrics::rouge_n<std::string>(abc, xyz, 1), 0.0);
  EXPECT_DOUBLE_EQ(metrics::rouge_l<std::string>(abc, xyz), 0.0);
  EXPECT_DOUBLE_EQ(metrics::rouge_n<std::string>(abc, W{}, 1), 0.0);
}

TEST(Rouge, LcsIsSubsequenceNotSubstring) {
  const auto c = w("a x b y c"), r = w("a b c");
  EXPECT_EQ(metrics::lcs_length<std::string>(c, r), 3u);
  // P = 3/5, R = 1
  EXPECT_DOUBLE_EQ(metrics::rouge_l<std::string>(c, r), 2 * 0.6 / 1.6);
}

TEST(Bleu, HandExamples) {
  const auto ab = w("a b"), aa = w("a a");
  EXPECT_DOUBLE_EQ(metrics::bleu_n<std::string>(ab, ab, 1), 1.0);
  EXPECT_DOUBLE_EQ(metrics::bleu_n<std::string>(ab, ab, 2), 1.0);
  EXPECT_DOUBLE_EQ(metrics::bleu_n<std::string>(aa, ab, 1), 0.5);
  EXPECT_DOUBLE_EQ(metrics::bleu_n<std::string>(W{}, ab, 1), 0.0);
  EXPECT_DOUBLE_EQ(metrics::bleu_n<std::string>(w("a"), ab, 2), 0.0);
  // brevity penalty: one exact word against a two-word reference
  EXPECT_DOUBLE_EQ(metrics::bleu_n<std::string>(w("a"), ab, 1), std::exp(1.0 - 2.0));
}

TEST(Distinct, HandExamples) {
  EXPECT_DOUBLE_EQ(metrics::distinct_n<std::string>({w("a b a b")}, 1), 0.5);
  EXPECT_DOUBLE_EQ(metrics::distinct_n<std::string>({w("a b c d")}, 1), 1.0);
  EXPECT_DOUBLE_EQ(metrics::distinct_n<std::string>({W(10, "a")}, 1), 0.1);
  EXPECT_DOUBLE_EQ(metrics::distinct_n<std::string>({w("a b a b")}, 2), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(metrics::distinct_n<std::string>({w("a b"), w("a b")}, 1), 0.5);
  EXPECT_DOUBLE_EQ(metrics::distinct_n<std::string>({W{}}, 1), 0.0);
}

TEST(UnigramF1, HandExamples) {
  EXPECT_DOUBLE_EQ(metrics::unigram_f1<std::string>(w("a b c"), w("a b c")), 1.0);
  EXPECT_DOUBLE_EQ(metrics::unigram_f1<std::string>(w("a b c"), w("x y")), 0.0);
  EXPECT_DOUBLE_EQ(metrics::unigram_f1<std::string>(w("a b c"), w("b c d")), 2.0 / 3.0);
}

TEST(Auc, HandExamples) {
  const std::vector<double> p1 = {0.9, 0.8}, n1 = {0.7}, half = {0.5};
  EXPECT_DOUBLE_EQ(metrics::auc(p1, n1), 1.0);
  EXPECT_DOUBLE_EQ(metrics::auc(half, half), 0.5);
  EXPECT_THROW(metrics::auc(p1, std::vector<double>{}), Error);
}

TEST(Auc, EqualsBruteForcePairCountingExactly) {
  std::mt19937_64 rng(101);
  for (int t = 0; t < 100; ++t) {
    // coarse grid so ties are common
    std::uniform_int_distribution<int> v(0, 9), len(1, 20);
    std::vector<double> pos(len(rng)), neg(len(rng));
    for (auto& x : pos) x = v(rng) / 10.0;
    for (auto& x : neg) x = v(rng) / 10.0;
    EXPECT_EQ(metrics::auc(pos, neg), brute_auc(pos, neg));
  }
}

TEST(Auc, IdenticalDistributionsGiveOneHalf) {
  const std::vector<double> s = {0.1, 0.4, 0.4, 0.9};
  EXPECT_DOUBLE_EQ(metrics::auc(s, s), 0.5);
}

TEST(RecallAtK, HandExamples) {
  const std::vector<int> ranked = {7, 3, 9, 1, 4, 8};
  EXPECT_EQ(metrics::hit_at_k<int>(ranked, {9}, 5), 1.0);
  EXPECT_EQ(metrics::hit_at_k<int>(ranked, {8}, 5), 0.0);
}

TEST(RecallAtK, EqualsExhaustiveScan) {
  std::mt19937_64 rng(7);
  std::vector<std::vector<int>> ranked;
  std::vector<std::set<int>> pos;
  for (int s = 0; s < 200; ++s) {
    std::vector<int> r(10);
    for (int i = 0; i < 10; ++i) r[i] = i;
    std::shuffle(r.begin(), r.end(), rng);
    std::set<int> p;
    for (int i = 0; i < 10; ++i)
      if (rng() % 7 == 0) p.insert(i);
    ranked.push_back(r);
    pos.push_back(p);
  }
  for (std::size_t k : {1u, 3u, 5u, 10u}) {
    double hits = 0;
    for (std::size_t s = 0; s < ranked.size(); ++s) {
      bool hit = false;
      for (std::size_t i = 0; i < k; ++i)
        for (int p : pos[s]) hit |= ranked[s][i] == p;
      hits += hit;
    }
    EXPECT_EQ(metrics::recall_at_k(ranked, pos, k), hits / 200.0) << "k=" << k;
  }
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
  const double v = 58;
  EXPECT_NEAR(metrics::perplexity_from_nll(30 * std::log(v), 30), v, 1e-9);
  EXPECT_GE(metrics::perplexity_from_nll(0, 5), 1.0);
  EXPECT_THROW(metrics::perplexity_from_nll(1, 0), Error);
}

TEST(Metrics, BoundedAndPure) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> tok(0, 4), len(0, 8);
  for (int t = 0; t < 200; ++t) {
    std::vector<int> a(len(rng)), b(1 + len(rng));
    for (auto& x : a) x = tok(rng);
    for (auto& x : b) x = tok(rng);
    for (double v : {metrics::rouge_n<int>(a, b, 1), metrics::rouge_n<int>(a, b, 2), metrics::rouge_l<int>(a, b),
                     metrics::bleu_n<int>(a, b, 1), metrics::bleu_n<int>(a, b, 2), metrics::unigram_f1<int>(a, b),
                     metrics::distinct_n<int>({a, b}, 2)}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(metrics::rouge_l<int>(a, b), metrics::rouge_l<int>(a, b));
  }
}

TEST(EvalReport, FlatRecordSkipsAbsentFields) {
  metrics::EvalReport r;
  r.auc = 0.75;
  r.recall_at_k = 1.0;
  EXPECT_EQ(r.to_string(), "auc=0.750000 recall_at_5=1.000000");
}

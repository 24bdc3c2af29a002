#pragma once

#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "unimc/memory/memory_pool.hpp"
#include "unimc/metrics/metrics.hpp"
#include "unimc/pipeline/chat.hpp"
#include "unimc/training/examples.hpp"
#include "unimc/training/loss.hpp"

namespace unimc::metrics {

/// Whitespace-separated words; text metrics are computed over words.
inline std::vector<std::string> words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

inline std::string join_personas(const std::vector<corpus::Persona>& ps) {
  std::string out;
  for (const auto& p : ps) {
    if (!out.empty()) out += ' ';
    out += p.text;
  }
  return out;
}

struct EvalOptions {
  pipeline::DecodeConfig decode;
  std::size_t max_samples = 0;  // 0: every example
  std::size_t recall_k = 5;
};

inline std::size_t sample_count(std::size_t n, const EvalOptions& opt) {
  return opt.max_samples > 0 ? std::min(n, opt.max_samples) : n;
}

/// Summarization over CS examples: BF1 of the emit decision, Rouge of the
/// emitted text against the gold summary on gold-positive examples, and the
/// fraction of gold-positive examples whose decoded personas equal the gold.
template <class T>
EvalReport evaluate_summarization(const model::Model<T>& m, const std::vector<training::SubtaskExample>& cs,
                                  const EvalOptions& opt = {}) {
  const corpus::Tokenizer tok;
  EvalReport r;
  std::vector<int> pred, gold;
  double r1 = 0, r2 = 0, rl = 0, exact = 0;
  std::size_t positives = 0;
  const std::size_t n = sample_count(cs.size(), opt);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = cs[i];
    const auto s = pipeline::summarize(m, ex.context, opt.decode);
    pred.push_back(s.personas ? 1 : 0);
    gold.push_back(ex.z);
    if (!ex.z) continue;
    ++positives;
    const auto gold_personas = training::decode_personas(ex.target, tok);
    const auto cand = words(s.personas ? join_personas(*s.personas) : "");
    const auto ref = words(join_personas(gold_personas));
    r1 += rouge_n<std::string>(cand, ref, 1);
    r2 += rouge_n<std::string>(cand, ref, 2);
    rl += rouge_l<std::string>(cand, ref);
    if (s.personas && *s.personas == gold_personas) ++exact;
  }
  r.samples = n;
  r.bf1 = bf1(pred, gold);
  if (positives) {
    r.rouge_1 = r1 / double(positives);
    r.rouge_2 = r2 / double(positives);
    r.rouge_l = rl / double(positives);
    r.exact_match = exact / double(positives);
  }
  return r;
}

/// One retrieval query: every seen memory scored for a user turn.
struct RetrievalSample {
  std::vector<double> scores;
  std::vector<int> labels;  // 1 for memories the exchange uses
};

template <class T>
std::vector<RetrievalSample> score_retrieval(const model::Model<T>& m, const corpus::Corpus& c,
                                             const training::ExampleOptions& eo, std::size_t max_samples = 0) {
  const corpus::Tokenizer tok;
  std::vector<RetrievalSample> out;
  for (const auto& d : c.dialogues) {
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      if (d.turns[t].role != model::Role::USER) continue;
      const auto seen = d.seen_before(t);
      if (seen.empty()) continue;
      if (max_samples > 0 && out.size() >= max_samples) return out;
      const auto positives = training::exchange_positives(d, t);
      const auto context = training::context_window(d, t, eo.context_utterances, tok);
      RetrievalSample s;
      for (const auto& p : seen) {
        s.scores.push_back(memory::relevance_score(m, context, training::to_memory(p, tok)));
        s.labels.push_back(training::contains(positives, p) ? 1 : 0);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// AUC pooled over all (positive, negative) pairs and Recall@k over queries
/// with at least one positive memory.
inline EvalReport retrieval_report(const std::vector<RetrievalSample>& samples, std::size_t k) {
  EvalReport r;
  std::vector<double> pos, neg;
  std::vector<std::vector<std::size_t>> ranked;
  std::vector<std::set<std::size_t>> gold;
  for (const auto& s : samples) {
    std::set<std::size_t> g;
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
      (s.labels[i] ? pos : neg).push_back(s.scores[i]);
      if (s.labels[i]) g.insert(i);
    }
    if (g.empty()) continue;
    std::vector<std::size_t> order(s.scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
    ranked.push_back(std::move(order));
    gold.push_back(std::move(g));
  }
  r.samples = samples.size();
  if (!pos.empty() && !neg.empty()) r.auc = auc(pos, neg);
  if (!ranked.empty()) r.recall_at_k = recall_at_k(ranked, gold, k);
  return r;
}

template <class T>
EvalReport evaluate_retrieval(const model::Model<T>& m, const corpus::Corpus& c, const training::ExampleOptions& eo,
                              const EvalOptions& opt = {}) {
  return retrieval_report(score_retrieval(m, c, eo, opt.max_samples), opt.recall_k);
}

/// Teacher-forced per-token NLL of the responses (EOS included).
template <class T>
double response_nll(const model::Model<T>& m, const std::vector<training::SubtaskExample>& mag,
                    std::size_t max_samples = 0, std::size_t* tokens_out = nullptr) {
  double total = 0;
  std::size_t tokens = 0;
  const std::size_t n = max_samples > 0 ? std::min(mag.size(), max_samples) : mag.size();
  for (std::size_t i = 0; i < n; ++i) {
    numerics::Graph<T> g;
    const auto terms = training::example_terms(g, m, mag[i]);
    total += double(g.value(*terms.nll)[0]) * double(terms.tokens);
    tokens += terms.tokens;
  }
  if (tokens_out) *tokens_out = tokens;
  if (tokens == 0) throw Error("response_nll: no response tokens");
  return total / double(tokens);
}

/// Generation: PPL from teacher forcing on the MAG examples; BLEU, Distinct
/// and F1 from responses decoded with the top memories retrieved from the
/// memories seen so far.
template <class T>
EvalReport evaluate_generation(const model::Model<T>& m, const corpus::Corpus& c,
                               const std::vector<training::SubtaskExample>& mag, const EvalOptions& opt = {},
                               bool decode_responses = true) {
  const corpus::Tokenizer tok;
  EvalReport r;
  const double nll = response_nll(m, mag, opt.max_samples);
  r.nll = nll;
  r.ppl = std::exp(nll);
  r.samples = sample_count(mag.size(), opt);
  if (!decode_responses) return r;

  double b1 = 0, b2 = 0, f1 = 0;
  std::vector<std::vector<std::string>> responses;
  for (std::size_t i = 0; i < r.samples; ++i) {
    const auto& ex = mag[i];
    const auto& d = c.dialogues[ex.dialogue];
    const auto seen = d.seen_before(ex.turn);
    std::vector<std::pair<double, model::MemoryInput>> scored;
    for (const auto& p : seen) {
      auto in = training::to_memory(p, tok);
      scored.emplace_back(memory::relevance_score(m, ex.context, in), std::move(in));
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<model::MemoryInput> mems;
    for (std::size_t k = 0; k < scored.size() && k < static_cast<std::size_t>(opt.decode.retrieve_k); ++k)
      mems.push_back(scored[k].second);
    const auto gen = pipeline::generate(m, ex.context, mems, opt.decode);
    const auto cand = words(gen.text);
    const auto ref = words(tok.detokenize(ex.target));
    b1 += bleu_n<std::string>(cand, ref, 1);
    b2 += bleu_n<std::string>(cand, ref, 2);
    f1 += unigram_f1<std::string>(cand, ref);
    responses.push_back(cand);
  }
  if (r.samples) {
    r.bleu_1 = b1 / double(r.samples);
    r.bleu_2 = b2 / double(r.samples);
    r.unigram_f1 = f1 / double(r.samples);
    r.distinct_1 = distinct_n(responses, 1);
    r.distinct_2 = distinct_n(responses, 2);
  }
  return r;
}

}  // namespace unimc::metrics

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "unimc/model/transformer.hpp"

namespace unimc::pipeline {

using model::Task;
using model::TokenId;
using numerics::Tensor;

struct DecodeConfig {
  int beam_size = 1;
  int max_new_tokens = 64;
  bool eg_enabled = false;
  double alpha = 1.0;
  int top_k_vocab = 10;
  int retrieve_k = 3;

  void validate() const {
    if (beam_size < 1) throw Error("decode config: beam_size must be >= 1");
    if (!(alpha >= 0)) throw Error("decode config: alpha must be >= 0");
    if (top_k_vocab < 1) throw Error("decode config: top_k_vocab must be >= 1");
    if (max_new_tokens < 1) throw Error("decode config: max_new_tokens must be >= 1");
    if (retrieve_k < 0) throw Error("decode config: retrieve_k must be >= 0");
  }
};

/// Index of the largest value; ties go to the lowest index.
template <class T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Guided token choice: among the `k` most probable tokens of `step_probs`,
/// the one maximizing step_probs[w] + alpha * guide_probs[w]. Ties go to the
/// lowest id.
template <class T>
TokenId eg_select(std::span<const T> step_probs, std::span<const T> guide_probs, double alpha, int k) {
  if (step_probs.size() != guide_probs.size()) {
    throw ShapeError(detail::concat("eg_select: ", step_probs.size(), " step probabilities vs ", guide_probs.size(),
                                    " guide probabilities"));
  }
  std::vector<std::size_t> ids(step_probs.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 1)), ids.size());
  std::partial_sort(ids.begin(), ids.begin() + kk, ids.end(), [&](std::size_t a, std::size_t b) {
    return step_probs[a] != step_probs[b] ? step_probs[a] > step_probs[b] : a < b;
  });
  ids.resize(kk);
  std::sort(ids.begin(), ids.end());
  std::size_t best = ids[0];
  double best_score = double(step_probs[best]) + alpha * double(guide_probs[best]);
  for (std::size_t i : ids) {
    const double s = double(step_probs[i]) + alpha * double(guide_probs[i]);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return static_cast<TokenId>(best);
}

/// softmax(LM-head(h_z)): the token distribution read off the relevance state.
template <class T>
std::vector<T> guide_distribution(const model::Model<T>& m, std::span<const T> h_z) {
  numerics::Graph<T> g;
  auto x = g.constant(Tensor<T>({1, h_z.size()}, std::vector<T>(h_z.begin(), h_z.end())));
  const auto& logits = g.value(m.lm_logits(g, x));
  return numerics::softmax<T>(logits.values());
}

template <class T>
struct Decoded {
  std::vector<TokenId> tokens;  // without the decoder prefix and EOS
  std::optional<double> z_prob;
  std::optional<model::RelevanceOutput<T>> relevance;
  double log_prob = 0;
};

namespace detail_decode {

template <class T>
std::vector<T> last_row_probs(const Tensor<T>& logits) {
  const auto row = logits.row(logits.rows() - 1);
  return numerics::softmax<T>(row);
}

}  // namespace detail_decode

/// Greedy decoding, optionally explicitly guided. `fused` holds the encoder
/// states the decoder cross-attends to.
template <class T>
Decoded<T> greedy_decode(const model::Model<T>& m, const Tensor<T>& fused, Task task, const DecodeConfig& cfg) {
  cfg.validate();
  std::vector<TokenId> input = model::decoder_input(m.config().relevance, task);
  const std::size_t prefix = input.size();
  Decoded<T> out;
  std::vector<T> guide;
  const TokenId eos = model::id(model::SpecialToken::EOS);
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    const auto d = m.decode_logits(fused, input);
    if (step == 0 && d.relevance) {
      out.relevance = d.relevance;
      out.z_prob = d.relevance->probs[1];
      if (cfg.eg_enabled) guide = guide_distribution<T>(m, d.relevance->h_z);
    }
    const auto probs = detail_decode::last_row_probs(d.logits);
    const TokenId next = guide.empty() ? static_cast<TokenId>(argmax<T>(probs))
                                       : eg_select<T>(probs, guide, cfg.alpha, cfg.top_k_vocab);
    out.log_prob += std::log(std::max(double(probs[next]), 1e-300));
    if (next == eos) break;
    input.push_back(next);
  }
  out.tokens.assign(input.begin() + prefix, input.end());
  return out;
}

/// Beam search scored by length-normalized log-probability (EOS included in
/// the length). No guidance is applied.
template <class T>
Decoded<T> beam_decode(const model::Model<T>& m, const Tensor<T>& fused, Task task, const DecodeConfig& cfg) {
  cfg.validate();
  struct Hyp {
    std::vector<TokenId> tokens;
    double log_prob = 0;
  };
  const TokenId eos = model::id(model::SpecialToken::EOS);
  const auto prefix = model::decoder_input(m.config().relevance, task);
  const auto beam = static_cast<std::size_t>(cfg.beam_size);
  std::vector<Hyp> live{Hyp{}};
  std::vector<std::pair<double, Hyp>> finished;
  Decoded<T> out;

  for (int step = 0; step < cfg.max_new_tokens && !live.empty(); ++step) {
    std::vector<Hyp> cand;
    for (const auto& h : live) {
      auto input = prefix;
      input.insert(input.end(), h.tokens.begin(), h.tokens.end());
      const auto d = m.decode_logits(fused, input);
      if (step == 0 && d.relevance) {
        out.relevance = d.relevance;
        out.z_prob = d.relevance->probs[1];
      }
      const auto probs = detail_decode::last_row_probs(d.logits);
      std::vector<std::size_t> ids(probs.size());
      for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
      const std::size_t kk = std::min(beam, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + kk, ids.end(),
                        [&](std::size_t a, std::size_t b) { return probs[a] != probs[b] ? probs[a] > probs[b] : a < b; });
      for (std::size_t i = 0; i < kk; ++i) {
        Hyp n = h;
        n.tokens.push_back(static_cast<TokenId>(ids[i]));
        n.log_prob += std::log(std::max(double(probs[ids[i]]), 1e-300));
        cand.push_back(std::move(n));
      }
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Hyp& a, const Hyp& b) { return a.log_prob > b.log_prob; });
    live.clear();
    for (auto& c : cand) {
      if (live.size() == beam) break;
      if (c.tokens.back() == eos) {
        const double score = c.log_prob / double(c.tokens.size());
        finished.push_back({score, std::move(c)});
      } else {
        live.push_back(std::move(c));
      }
    }
    if (finished.size() >= beam) break;
  }
  for (auto& h : live) {
    const double score = h.log_prob / double(std::max<std::size_t>(h.tokens.size(), 1));
    finished.push_back({score, std::move(h)});
  }
  std::stable_sort(finished.begin(), finished.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const auto best = finished.begin();
  out.log_prob = best->second.log_prob;
  out.tokens = best->second.tokens;
  if (!out.tokens.empty() && out.tokens.back() == eos) out.tokens.pop_back();
  return out;
}

/// Greedy (guided when enabled) for beam 1, beam search otherwise.
template <class T>
Decoded<T> decode_sequence(const model::Model<T>& m, const Tensor<T>& fused, Task task, const DecodeConfig& cfg) {
  return cfg.beam_size == 1 ? greedy_decode(m, fused, task, cfg) : beam_decode(m, fused, task, cfg);
}

}  // namespace unimc::pipeline

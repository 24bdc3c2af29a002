#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "unimc/corpus/corpus.hpp"
#include "unimc/corpus/tokenizer.hpp"
#include "unimc/model/config.hpp"
#include "unimc/model/inputs.hpp"

namespace unimc::training {

using corpus::Persona;
using model::MemoryInput;
using model::Role;
using model::Task;
using model::TokenId;
using model::Utterance;

/// One training instance of a subtask.
struct SubtaskExample {
  Task kind = Task::CS;
  std::vector<Utterance> context;   // current-session window ending at the query
  std::vector<MemoryInput> memories;
  std::vector<Persona> memory_personas;  // same order as `memories`
  int z = 0;
  std::vector<TokenId> target;  // summary (CS), response (MAG), empty (MR)
  std::size_t dialogue = 0;
  std::size_t turn = 0;  // index of the user query in the dialogue
};

struct ExampleOptions {
  int context_utterances = 3;  // window ending at the query, same session only
  int mr_scale = 5;
  int k_neg = 3;
  std::uint64_t seed = 2022;
};

inline MemoryInput to_memory(const Persona& p, const corpus::Tokenizer& tok) {
  return {p.owner, tok.tokenize(p.text)};
}

/// Role-tagged persona sentences: `[USER] i like tea. [BOT] ...`.
inline std::vector<TokenId> encode_personas(const std::vector<Persona>& ps, const corpus::Tokenizer& tok) {
  std::vector<TokenId> out;
  for (const auto& p : ps) {
    out.push_back(model::role_token(p.owner));
    const auto t = tok.tokenize(p.text);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

/// Inverse of encode_personas(); text before the first role marker is dropped.
inline std::vector<Persona> decode_personas(std::span<const TokenId> tokens, const corpus::Tokenizer& tok) {
  std::vector<Persona> out;
  for (TokenId t : tokens) {
    if (t == model::id(model::SpecialToken::ROLE_USER) || t == model::id(model::SpecialToken::ROLE_BOT)) {
      out.push_back({t == model::id(model::SpecialToken::ROLE_USER) ? Role::USER : Role::BOT, {}});
    } else if (!out.empty() && !model::is_special(t)) {
      out.back().text += tok.detokenize(std::span<const TokenId>(&t, 1));
    }
  }
  std::erase_if(out, [](const Persona& p) { return p.text.empty(); });
  return out;
}

/// Current-session utterances ending at turn `t`, at most `window` of them.
inline std::vector<Utterance> context_window(const corpus::Dialogue& d, std::size_t t, int window,
                                             const corpus::Tokenizer& tok) {
  std::vector<Utterance> out;
  std::size_t first = t + 1 > static_cast<std::size_t>(window) ? t + 1 - window : 0;
  while (first < t && !d.same_session(first, t)) ++first;
  for (std::size_t i = first; i <= t; ++i) out.push_back({d.turns[i].role, tok.tokenize(d.turns[i].text)});
  return out;
}

/// Gold summary for the user query at `t`: personas newly revealed by the
/// previous bot turn of the same session, then by the query itself.
inline std::vector<Persona> gold_summary(const corpus::Dialogue& d, std::size_t t) {
  std::vector<Persona> out;
  if (t > 0 && d.same_session(t - 1, t)) out = d.turns[t - 1].summary;
  out.insert(out.end(), d.turns[t].summary.begin(), d.turns[t].summary.end());
  return out;
}

/// Personas used by the exchange starting at user turn `t`.
inline std::vector<Persona> exchange_positives(const corpus::Dialogue& d, std::size_t t) {
  std::vector<Persona> out = d.turns[t].personas_used;
  if (t + 1 < d.turns.size())
    for (const auto& p : d.turns[t + 1].personas_used)
      if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  return out;
}

inline bool contains(const std::vector<Persona>& v, const Persona& p) {
  return std::find(v.begin(), v.end(), p) != v.end();
}

inline std::vector<SubtaskExample> make_cs_examples(const corpus::Corpus& c, const ExampleOptions& opt = {}) {
  const corpus::Tokenizer tok;
  std::vector<SubtaskExample> out;
  for (std::size_t di = 0; di < c.dialogues.size(); ++di) {
    const auto& d = c.dialogues[di];
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      if (d.turns[t].role != Role::USER) continue;
      SubtaskExample ex;
      ex.kind = Task::CS;
      ex.context = context_window(d, t, opt.context_utterances, tok);
      ex.target = encode_personas(gold_summary(d, t), tok);
      ex.z = ex.target.empty() ? 0 : 1;
      ex.dialogue = di;
      ex.turn = t;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

/// `scale` examples per user query that has seen memories; each samples one
/// persona uniformly from the memories seen so far.
inline std::vector<SubtaskExample> make_mr_examples(const corpus::Corpus& c, const ExampleOptions& opt = {}) {
  const corpus::Tokenizer tok;
  std::mt19937_64 rng(opt.seed ^ 0x6d72ull);
  std::vector<SubtaskExample> out;
  for (std::size_t di = 0; di < c.dialogues.size(); ++di) {
    const auto& d = c.dialogues[di];
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      if (d.turns[t].role != Role::USER) continue;
      const auto seen = d.seen_before(t);
      if (seen.empty()) continue;
      const auto positives = exchange_positives(d, t);
      const auto context = context_window(d, t, opt.context_utterances, tok);
      std::uniform_int_distribution<std::size_t> pick(0, seen.size() - 1);
      for (int r = 0; r < opt.mr_scale; ++r) {
        const Persona& p = seen[pick(rng)];
        SubtaskExample ex;
        ex.kind = Task::MR;
        ex.context = context;
        ex.memories = {to_memory(p, tok)};
        ex.memory_personas = {p};
        ex.z = contains(positives, p) ? 1 : 0;
        ex.dialogue = di;
        ex.turn = t;
        out.push_back(std::move(ex));
      }
    }
  }
  return out;
}

/// Negative memories for a query: seen personas that are not positives, topped
/// up from personas foreign to the dialogue when fewer than `count` exist.
inline std::vector<Persona> sample_negatives(const corpus::Dialogue& d, std::size_t t,
                                             const std::vector<Persona>& positives, std::size_t count,
                                             std::mt19937_64& rng) {
  std::vector<Persona> pool;
  for (const auto& p : d.seen_before(t))
    if (!contains(positives, p)) pool.push_back(p);
  std::shuffle(pool.begin(), pool.end(), rng);
  if (pool.size() > count) pool.resize(count);
  if (pool.size() < count) {
    std::vector<Persona> dialogue_personas = d.inventory(Role::USER);
    for (const auto& p : d.inventory(Role::BOT)) dialogue_personas.push_back(p);
    std::vector<Persona> foreign;
    for (const auto& p : corpus::all_personas(corpus::default_templates()))
      if (!contains(dialogue_personas, p) && !contains(positives, p)) foreign.push_back(p);
    std::shuffle(foreign.begin(), foreign.end(), rng);
    for (std::size_t i = 0; pool.size() < count && i < foreign.size(); ++i) pool.push_back(foreign[i]);
  }
  return pool;
}

/// One example per user query; grounded exchanges get their gold personas
/// plus negative noise up to `k_neg` passages (z = 1), the rest get `k_neg`
/// negatives only (z = 0).
inline std::vector<SubtaskExample> make_mag_examples(const corpus::Corpus& c, const ExampleOptions& opt = {}) {
  const corpus::Tokenizer tok;
  std::mt19937_64 rng(opt.seed ^ 0x6d6167ull);
  std::vector<SubtaskExample> out;
  for (std::size_t di = 0; di < c.dialogues.size(); ++di) {
    const auto& d = c.dialogues[di];
    for (std::size_t t = 0; t + 1 < d.turns.size(); ++t) {
      if (d.turns[t].role != Role::USER || d.turns[t + 1].role != Role::BOT) continue;
      const auto positives = exchange_positives(d, t);
      const std::size_t k = static_cast<std::size_t>(std::max(opt.k_neg, 0));
      const std::size_t noise = positives.size() >= k ? 0 : k - positives.size();
      std::vector<Persona> mem = positives;
      for (auto& p : sample_negatives(d, t, positives, positives.empty() ? k : noise, rng)) mem.push_back(p);
      std::shuffle(mem.begin(), mem.end(), rng);
      SubtaskExample ex;
      ex.kind = Task::MAG;
      ex.context = context_window(d, t, opt.context_utterances, tok);
      for (const auto& p : mem) ex.memories.push_back(to_memory(p, tok));
      ex.memory_personas = mem;
      ex.z = positives.empty() ? 0 : 1;
      ex.target = tok.tokenize(d.turns[t + 1].text);
      ex.dialogue = di;
      ex.turn = t;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace unimc::training

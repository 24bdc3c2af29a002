#pragma once

#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "unimc/corpus/tokenizer.hpp"
#include "unimc/memory/memory_pool.hpp"
#include "unimc/pipeline/decoding.hpp"
#include "unimc/training/examples.hpp"

namespace unimc::pipeline {

using corpus::Persona;
using model::Role;
using model::Utterance;

struct Generation {
  std::optional<double> z_prob;  // absent without a relevance head
  std::vector<TokenId> tokens;
  std::string text;
};

struct Summary {
  std::optional<double> z_prob;
  std::optional<std::vector<Persona>> personas;  // none: nothing to compact
  std::vector<TokenId> tokens;
};

/// Encoder states for a context and memories as one value tensor.
template <class T>
Tensor<T> fused_states(const model::Model<T>& m, std::span<const Utterance> context,
                       std::span<const model::MemoryInput> memories, bool context_proxy) {
  numerics::Graph<T> g;
  return g.value(m.encode_inputs(g, context, memories, context_proxy));
}

/// Response for `context` (ending with the user query) given memories.
template <class T>
Generation generate(const model::Model<T>& m, std::span<const Utterance> context,
                    std::span<const model::MemoryInput> memories, const DecodeConfig& cfg) {
  if (context.empty()) throw Error("generate: empty context");
  const auto fused = fused_states(m, context, memories, false);
  const auto d = decode_sequence(m, fused, Task::MAG, cfg);
  return {d.z_prob, d.tokens, corpus::Tokenizer().detokenize(d.tokens)};
}

/// Persona summary of `context` (ending with the query). With a relevance
/// head nothing is emitted when P(z=1) < 0.5; without one the decoded
/// summary decides, and an empty decode means nothing to compact.
template <class T>
Summary summarize(const model::Model<T>& m, std::span<const Utterance> context, const DecodeConfig& cfg) {
  if (context.empty()) throw Error("summarize: empty context");
  const auto fused = fused_states(m, context, {}, true);
  Summary out;
  if (m.config().relevance != model::RelevanceMode::NONE) {
    // the relevance row does not depend on the decoded tokens
    const auto probe = m.decode_logits(fused, model::decoder_input(m.config().relevance, Task::CS));
    out.z_prob = probe.relevance->probs[1];
    if (*out.z_prob < 0.5) return out;
  }
  const auto d = decode_sequence(m, fused, Task::CS, cfg);
  out.tokens = d.tokens;
  auto personas = training::decode_personas(d.tokens, corpus::Tokenizer());
  if (m.config().relevance == model::RelevanceMode::NONE && personas.empty()) return out;
  out.personas = std::move(personas);
  return out;
}

/// One agent's side of a conversation.
template <class T>
struct ChatState {
  std::vector<Utterance> transcript;  // current session, alternating user/bot
  memory::MemoryPool<T> pool;
  int turn = 0;
  int context_utterances = 3;

  explicit ChatState(double lambda = 0.9, int context = 3) : pool(lambda), context_utterances(context) {}

  /// Start a new session: the transcript is cleared, the pool kept.
  void new_session() { transcript.clear(); }

  std::vector<Utterance> context() const {
    const std::size_t n = std::min(transcript.size(), static_cast<std::size_t>(context_utterances));
    return {transcript.end() - static_cast<std::ptrdiff_t>(n), transcript.end()};
  }
};

struct ChatTurn {
  std::string response;
  std::vector<std::string> retrieved_ids;  // `owner:index` in pool order at retrieval time
  std::vector<Persona> retrieved;
  std::optional<double> generation_z;
  std::optional<double> summary_z;
  std::vector<Persona> written;
  std::vector<memory::WriteOutcome> outcomes;
};

/// Retrieve, generate, summarize, write.
template <class T>
ChatTurn chat_step(ChatState<T>& state, const std::string& user_utterance, const model::Model<T>& m,
                   const DecodeConfig& cfg) {
  cfg.validate();
  const corpus::Tokenizer tok;
  state.transcript.push_back({Role::USER, tok.tokenize(user_utterance)});
  const auto context = state.context();
  ChatTurn out;

  const auto ranked = memory::rank(state.pool, context, m);
  std::vector<model::MemoryInput> memories;
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(cfg.retrieve_k); ++i) {
    memories.push_back(ranked[i].memory->input());
    out.retrieved_ids.push_back(ranked[i].id());
    out.retrieved.push_back(ranked[i].memory->persona());
  }

  const auto gen = generate(m, context, memories, cfg);
  out.response = gen.text;
  out.generation_z = gen.z_prob;

  const auto summary = summarize(m, context, cfg);
  out.summary_z = summary.z_prob;
  if (summary.personas) {
    for (const auto& p : *summary.personas) {
      out.outcomes.push_back(state.pool.write(memory::embed_memory(p.owner, p.text, m)));
      out.written.push_back(p);
    }
  }

  state.transcript.push_back({Role::BOT, gen.tokens});
  ++state.turn;
  return out;
}

// ---------------------------------------------------------------------------
// Self-chat

struct SelfChatConfig {
  int episodes = 1;
  int sessions_per_episode = 4;
  int rounds_per_session = 16;
  std::uint64_t seed = 2022;
  double lambda = 0.9;
  int context_utterances = 3;
};

struct TranscriptLine {
  std::string speaker;  // "a" or "b"
  std::string text;
  std::vector<std::string> retrieved_ids;
};

struct Episode {
  std::vector<TranscriptLine> lines;
  std::vector<std::size_t> pool_sizes_a, pool_sizes_b;  // after every round
};

inline const std::vector<std::string>& default_openings() {
  static const std::vector<std::string> o = {
      "hi, how are you?", "i have a dog.",        "what food do you like?", "i am from tokyo.",
      "what is your job?", "i enjoy chess a lot.", "nice weather today.",    "where are you from?",
  };
  return o;
}

/// Two agents converse. Each round, agent b's message (an opening at the
/// start of a session) goes to agent a, whose reply goes back to agent b.
/// Each agent sees the other as the user and keeps its own pool.
template <class T>
std::vector<Episode> self_chat(const model::Model<T>& model_a, const model::Model<T>& model_b,
                               const std::vector<std::string>& openings, const SelfChatConfig& cfg,
                               const DecodeConfig& decode) {
  if (openings.empty()) throw Error("self_chat: no openings");
  std::mt19937_64 rng(cfg.seed);
  std::vector<Episode> out;
  for (int e = 0; e < cfg.episodes; ++e) {
    ChatState<T> a(cfg.lambda, cfg.context_utterances), b(cfg.lambda, cfg.context_utterances);
    Episode ep;
    for (int s = 0; s < cfg.sessions_per_episode; ++s) {
      a.new_session();
      b.new_session();
      std::string message = openings[std::uniform_int_distribution<std::size_t>(0, openings.size() - 1)(rng)];
      ep.lines.push_back({"b", message, {}});
      for (int r = 0; r < cfg.rounds_per_session; ++r) {
        const auto ta = chat_step(a, message, model_a, decode);
        ep.lines.push_back({"a", ta.response, ta.retrieved_ids});
        const auto tb = chat_step(b, ta.response, model_b, decode);
        ep.pool_sizes_a.push_back(a.pool.size());
        ep.pool_sizes_b.push_back(b.pool.size());
        message = tb.response;
        ep.lines.push_back({"b", message, tb.retrieved_ids});
      }
    }
    out.push_back(std::move(ep));
  }
  return out;
}

inline std::string format_transcript_line(const TranscriptLine& l) {
  std::string ids;
  for (std::size_t i = 0; i < l.retrieved_ids.size(); ++i) {
    if (i) ids += ',';
    ids += l.retrieved_ids[i];
  }
  return l.speaker + '\t' + l.text + '\t' + ids;
}

inline void write_transcripts(const std::string& path, const std::vector<Episode>& episodes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write transcript " + path);
  for (const auto& ep : episodes)
    for (const auto& l : ep.lines) os << format_transcript_line(l) << '\n';
}

}  // namespace unimc::pipeline

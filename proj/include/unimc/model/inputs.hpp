#pragma once

#include <span>
#include <vector>

#include "unimc/error.hpp"
#include "unimc/model/config.hpp"
#include "unimc/model/special_tokens.hpp"

namespace unimc::model {

struct Utterance {
  Role role = Role::USER;
  std::vector<TokenId> tokens;
};

struct MemoryInput {
  Role owner = Role::USER;
  std::vector<TokenId> tokens;
};

/// `[M] role persona...`
inline std::vector<TokenId> memory_passage(const MemoryInput& m) {
  std::vector<TokenId> out{id(SpecialToken::M), role_token(m.owner)};
  out.insert(out.end(), m.tokens.begin(), m.tokens.end());
  return out;
}

/// Role-tagged utterances, optionally prefixed with a bare [M]. The oldest
/// utterances are dropped until `prefix` plus the passage fits in
/// `max_positions`; if even the newest utterance does not fit, throws.
inline std::vector<TokenId> context_passage(std::span<const Utterance> context, bool with_proxy, int max_positions,
                                            std::span<const TokenId> prefix = {}) {
  if (context.empty()) throw Error("context passage: empty context");
  const std::size_t budget = static_cast<std::size_t>(max_positions);
  std::size_t first = 0;
  auto length_from = [&](std::size_t start) {
    std::size_t n = prefix.size() + (with_proxy ? 1 : 0);
    for (std::size_t i = start; i < context.size(); ++i) n += 1 + context[i].tokens.size();
    return n;
  };
  while (first < context.size() && length_from(first) > budget) ++first;
  if (first == context.size()) {
    throw Error(detail::concat("context passage: newest utterance alone exceeds max_positions ", max_positions,
                               "; truncate it"));
  }
  std::vector<TokenId> out(prefix.begin(), prefix.end());
  if (with_proxy) out.push_back(id(SpecialToken::M));
  for (std::size_t i = first; i < context.size(); ++i) {
    out.push_back(role_token(context[i].role));
    out.insert(out.end(), context[i].tokens.begin(), context[i].tokens.end());
  }
  return out;
}

inline TokenId start_token(RelevanceMode mode, Task task) {
  switch (mode) {
    case RelevanceMode::SHARED_CLS: return id(SpecialToken::CLS);
    case RelevanceMode::DIFF_CLS:
      return task == Task::CS ? id(SpecialToken::CLS_CS)
                              : task == Task::MR ? id(SpecialToken::CLS_MR) : id(SpecialToken::CLS_MAG);
    case RelevanceMode::NONE: break;
  }
  throw Error("start token requested with relevance mode none");
}

inline bool is_start_token(TokenId t) {
  return t == id(SpecialToken::CLS) || t == id(SpecialToken::CLS_CS) || t == id(SpecialToken::CLS_MR) ||
         t == id(SpecialToken::CLS_MAG);
}

inline TokenId task_identifier(Task task) {
  if (task == Task::MR) throw Error("retrieval has no task identifier");
  return task == Task::CS ? id(SpecialToken::CMP) : id(SpecialToken::GNR);
}

/// Decoder input for a task: `[start] [CMP|GNR] target...` (no start token
/// when the relevance head is disabled; retrieval is the start token alone).
inline std::vector<TokenId> decoder_input(RelevanceMode mode, Task task, std::span<const TokenId> target = {}) {
  std::vector<TokenId> out;
  if (mode != RelevanceMode::NONE) out.push_back(start_token(mode, task));
  if (task == Task::MR) {
    if (mode == RelevanceMode::NONE) throw Error("retrieval task requires a relevance start token");
    return out;
  }
  out.push_back(task_identifier(task));
  out.insert(out.end(), target.begin(), target.end());
  return out;
}

/// Index of the task identifier in a decoder input; the first target token is
/// predicted from this position.
inline std::size_t task_position(RelevanceMode mode) { return mode == RelevanceMode::NONE ? 0 : 1; }

}  // namespace unimc::model

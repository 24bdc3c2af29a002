#pragma once

#include <array>
#include <string_view>

namespace unimc::model {

using TokenId = int;

/// Reserved vocabulary ids. Corpus symbols are numbered from kNumSpecial up.
enum class SpecialToken : TokenId {
  PAD = 0,
  BOS,
  EOS,
  UNK,
  M,          // memory pool proxy
  CLS,        // shared relevance start token
  CMP,        // summarization task identifier
  GNR,        // generation task identifier
  ROLE_USER,
  ROLE_BOT,
  CLS_CS,     // per-task start tokens for the different-[CLS] ablation
  CLS_MR,
  CLS_MAG,
};

inline constexpr TokenId kNumSpecial = 13;

constexpr TokenId id(SpecialToken t) noexcept { return static_cast<TokenId>(t); }

constexpr bool is_special(TokenId t) noexcept { return t >= 0 && t < kNumSpecial; }

inline constexpr std::array<std::string_view, kNumSpecial> kSpecialNames = {
    "[PAD]", "[BOS]", "[EOS]", "[UNK]", "[M]", "[CLS]", "[CMP]",
    "[GNR]", "[USER]", "[BOT]", "[CLS_CS]", "[CLS_MR]", "[CLS_MAG]"};

enum class Role { USER, BOT };

constexpr TokenId role_token(Role r) noexcept {
  return r == Role::USER ? id(SpecialToken::ROLE_USER) : id(SpecialToken::ROLE_BOT);
}

constexpr std::string_view role_name(Role r) noexcept { return r == Role::USER ? "user" : "bot"; }

constexpr Role other(Role r) noexcept { return r == Role::USER ? Role::BOT : Role::USER; }

}  // namespace unimc::model

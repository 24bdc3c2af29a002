#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unimc/model/special_tokens.hpp"

namespace unimc::corpus {

using model::TokenId;

/// Character-level vocabulary: the reserved specials followed by one id per
/// symbol of the template alphabet.
class Tokenizer {
 public:
  static constexpr std::string_view kAlphabet = " abcdefghijklmnopqrstuvwxyz0123456789.,?!'-:";

  Tokenizer() {
    lookup_.fill(id(model::SpecialToken::UNK));
    for (std::size_t i = 0; i < kAlphabet.size(); ++i) {
      lookup_[static_cast<unsigned char>(kAlphabet[i])] = model::kNumSpecial + static_cast<TokenId>(i);
    }
  }

  static constexpr int vocab_size() noexcept { return model::kNumSpecial + static_cast<int>(kAlphabet.size()); }

  TokenId token(char c) const noexcept { return lookup_[static_cast<unsigned char>(c)]; }

  std::vector<TokenId> tokenize(std::string_view text) const {
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(token(c));
    return out;
  }

  /// Inverse of tokenize(). Special ids render as their bracketed names.
  std::string detokenize(std::span<const TokenId> tokens) const {
    std::string out;
    for (TokenId t : tokens) {
      if (model::is_special(t)) {
        out += model::kSpecialNames[static_cast<std::size_t>(t)];
      } else if (t < vocab_size()) {
        out += kAlphabet[static_cast<std::size_t>(t - model::kNumSpecial)];
      }
    }
    return out;
  }

  static bool in_alphabet(std::string_view text) noexcept {
    for (char c : text)
      if (kAlphabet.find(c) == std::string_view::npos) return false;
    return true;
  }

 private:
  std::array<TokenId, 256> lookup_{};
};

}  // namespace unimc::corpus

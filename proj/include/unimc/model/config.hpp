#pragma once

#include <string>

#include "unimc/corpus/tokenizer.hpp"
#include "unimc/error.hpp"
#include "unimc/numerics/checkpoint.hpp"

namespace unimc::model {

enum class FusionMode { FID, FIE };
enum class RelevanceMode { SHARED_CLS, DIFF_CLS, NONE };
enum class Task { CS, MR, MAG };

inline std::string to_string(FusionMode m) { return m == FusionMode::FID ? "fid" : "fie"; }
inline std::string to_string(RelevanceMode m) {
  switch (m) {
    case RelevanceMode::SHARED_CLS: return "shared";
    case RelevanceMode::DIFF_CLS: return "diff";
    case RelevanceMode::NONE: return "none";
  }
  return "?";
}
inline std::string to_string(Task t) {
  switch (t) {
    case Task::CS: return "cs";
    case Task::MR: return "mr";
    case Task::MAG: return "mag";
  }
  return "?";
}

inline FusionMode parse_fusion(const std::string& s) {
  if (s == "fid") return FusionMode::FID;
  if (s == "fie") return FusionMode::FIE;
  throw Error("unknown fusion mode '" + s + "' (expected fid|fie)");
}

inline RelevanceMode parse_relevance(const std::string& s) {
  if (s == "shared") return RelevanceMode::SHARED_CLS;
  if (s == "diff") return RelevanceMode::DIFF_CLS;
  if (s == "none") return RelevanceMode::NONE;
  throw Error("unknown relevance mode '" + s + "' (expected shared|diff|none)");
}

struct ModelConfig {
  int vocab_size = corpus::Tokenizer::vocab_size();
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_ff = 0;  // 0 means 4 * d_model
  int max_positions = 256;
  FusionMode fusion = FusionMode::FID;
  RelevanceMode relevance = RelevanceMode::SHARED_CLS;
  std::uint64_t init_seed = 2022;

  int ff_width() const { return d_ff > 0 ? d_ff : 4 * d_model; }

  void validate() const {
    if (vocab_size <= kNumSpecial) throw Error("model config: vocab_size must exceed the reserved specials");
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
      throw Error(detail::concat("model config: d_model ", d_model, " not divisible by n_heads ", n_heads));
    }
    if (n_enc_layers < 1 || n_dec_layers < 1) throw Error("model config: need at least one layer per stack");
    if (max_positions < 8) throw Error("model config: max_positions too small");
  }

  numerics::Manifest to_manifest() const {
    return {{"vocab_size", std::to_string(vocab_size)},
            {"d_model", std::to_string(d_model)},
            {"n_heads", std::to_string(n_heads)},
            {"n_enc_layers", std::to_string(n_enc_layers)},
            {"n_dec_layers", std::to_string(n_dec_layers)},
            {"d_ff", std::to_string(ff_width())},
            {"max_positions", std::to_string(max_positions)},
            {"fusion", to_string(fusion)},
            {"relevance", to_string(relevance)},
            {"init_seed", std::to_string(init_seed)}};
  }

  static ModelConfig from_manifest(const numerics::Manifest& m) {
    ModelConfig c;
    auto num = [&](const char* key, int& out) {
      if (auto it = m.find(key); it != m.end()) out = std::stoi(it->second);
    };
    num("vocab_size", c.vocab_size);
    num("d_model", c.d_model);
    num("n_heads", c.n_heads);
    num("n_enc_layers", c.n_enc_layers);
    num("n_dec_layers", c.n_dec_layers);
    num("d_ff", c.d_ff);
    num("max_positions", c.max_positions);
    if (auto it = m.find("fusion"); it != m.end()) c.fusion = parse_fusion(it->second);
    if (auto it = m.find("relevance"); it != m.end()) c.relevance = parse_relevance(it->second);
    if (auto it = m.find("init_seed"); it != m.end()) c.init_seed = std::stoull(it->second);
    c.validate();
    return c;
  }
};

}  // namespace unimc::model

#pragma once

#include <atomic>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "unimc/model/config.hpp"
#include "unimc/model/inputs.hpp"
#include "unimc/model/special_tokens.hpp"
#include "unimc/numerics/checkpoint.hpp"
#include "unimc/numerics/graph.hpp"
#include "unimc/numerics/parameter.hpp"

namespace unimc::model {

using numerics::Graph;
using numerics::Parameter;
using numerics::ParameterStore;
using numerics::Tensor;
using numerics::Var;

/// Encoder states of one passage inside a graph.
struct EncodedPassage {
  Var states;
  std::optional<Var> proxy;  // row at the leading [M], memory passages only
};

template <class T>
struct EncoderOutput {
  Tensor<T> states;
  std::optional<std::vector<T>> proxy_vector;
};

template <class T>
struct RelevanceOutput {
  std::vector<T> h_z;
  std::vector<T> probs;  // P(z=0), P(z=1)
  std::vector<T> logits;
};

template <class T>
struct DecodeOutput {
  Tensor<T> logits;  // positions x vocab
  Tensor<T> hidden;  // positions x d_model
  std::optional<RelevanceOutput<T>> relevance;
};

/// Shared encoder-decoder transformer with the relevance head on the first
/// decoder position and an LM head for summary/response tokens.
template <class T>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore<T>& params() noexcept { return params_; }
  const ParameterStore<T>& params() const noexcept { return params_; }
  std::size_t encoder_calls() const noexcept { return encoder_calls_.load(); }

  void save(const std::string& path) const { numerics::save_checkpoint(path, params_, cfg_.to_manifest()); }

  void load(const std::string& path) { numerics::load_checkpoint(path, params_); }

  /// Build the model described by `path.manifest` and load `path` into it.
  static std::unique_ptr<Model> from_checkpoint(const std::string& path) {
    auto cfg = ModelConfig::from_manifest(numerics::read_manifest(numerics::manifest_path(path)));
    auto m = std::make_unique<Model>(cfg);
    m->load(path);
    return m;
  }

  // --- graph-level building blocks -------------------------------------

  EncodedPassage encode(Graph<T>& g, std::span<const TokenId> tokens, bool is_memory) const {
    check_length(tokens.size(), "encoder");
    if (is_memory && (tokens.empty() || tokens[0] != id(SpecialToken::M))) {
      throw Error("encode: memory passage must start with [M]");
    }
    ++encoder_calls_;
    Var x = embed(g, tokens, "enc.pos");
    for (int l = 0; l < cfg_.n_enc_layers; ++l) {
      const std::string p = "enc." + std::to_string(l) + ".";
      Var h = norm(g, x, p + "ln1");
      x = g.add(x, attend(g, h, h, p + "attn.", false));
      x = g.add(x, feed_forward(g, norm(g, x, p + "ln2"), p + "ff."));
    }
    Var states = norm(g, x, "enc.ln_f");
    EncodedPassage out{states, std::nullopt};
    if (is_memory) out.proxy = g.slice_rows(states, 0, 1);
    return out;
  }

  /// Cross-attention memory for the decoder. FID concatenates independently
  /// encoded passages along the sequence axis.
  Var fuse(Graph<T>& g, const EncodedPassage& context, std::span<const EncodedPassage> memories) const {
    if (memories.empty()) return context.states;
    std::vector<Var> parts{context.states};
    for (const auto& m : memories) parts.push_back(m.states);
    return g.concat_rows(parts);
  }

  /// Encode `context` with `memories` under the configured fusion mode.
  /// With FIE the memories are concatenated as text in front of the context
  /// and encoded once; the oldest context turns are dropped on overflow.
  Var encode_inputs(Graph<T>& g, std::span<const Utterance> context, std::span<const MemoryInput> memories,
                    bool context_proxy) const {
    if (cfg_.fusion == FusionMode::FIE) {
      std::vector<TokenId> prefix;
      for (const auto& m : memories) {
        const auto mp = memory_passage(m);
        prefix.insert(prefix.end(), mp.begin(), mp.end());
      }
      if (prefix.size() >= static_cast<std::size_t>(cfg_.max_positions)) {
        throw Error("fuse(fie): memories alone exceed max_positions");
      }
      const auto passage = context_passage(context, context_proxy, cfg_.max_positions, prefix);
      return encode(g, passage, false).states;
    }
    const auto ctx_tokens = context_passage(context, context_proxy, cfg_.max_positions);
    const EncodedPassage ctx = encode(g, ctx_tokens, false);
    std::vector<EncodedPassage> mem;
    for (const auto& m : memories) mem.push_back(encode(g, memory_passage(m), true));
    return fuse(g, ctx, mem);
  }

  /// Final decoder hidden states (positions x d_model).
  Var decode(Graph<T>& g, Var fused, std::span<const TokenId> input) const {
    validate_decoder_input(input);
    check_length(input.size(), "decoder");
    Var x = embed(g, input, "dec.pos");
    for (int l = 0; l < cfg_.n_dec_layers; ++l) {
      const std::string p = "dec." + std::to_string(l) + ".";
      Var h = norm(g, x, p + "ln1");
      x = g.add(x, attend(g, h, h, p + "self.", true));
      x = g.add(x, attend(g, norm(g, x, p + "ln2"), fused, p + "cross.", false));
      x = g.add(x, feed_forward(g, norm(g, x, p + "ln3"), p + "ff."));
    }
    return norm(g, x, "dec.ln_f");
  }

  Var lm_logits(Graph<T>& g, Var hidden) const {
    return g.linear(hidden, P(g, "lm_head.w"), P(g, "lm_head.b"));
  }

  /// softmax(MLP(h_z)) logits; h_z is a 1 x d_model row.
  Var relevance_logits(Graph<T>& g, Var h_z) const {
    if (cfg_.relevance == RelevanceMode::NONE) throw Error("relevance head called with relevance mode none");
    Var h = g.tanh(g.linear(h_z, P(g, "rel.w1"), P(g, "rel.b1")));
    return g.linear(h, P(g, "rel.w2"), P(g, "rel.b2"));
  }

  // --- value-level API ----------------------------------------------------

  EncoderOutput<T> encode_passage(std::span<const TokenId> tokens, bool is_memory) const {
    Graph<T> g;
    const auto enc = encode(g, tokens, is_memory);
    EncoderOutput<T> out{g.value(enc.states), std::nullopt};
    if (enc.proxy) {
      const auto& v = g.value(*enc.proxy);
      out.proxy_vector = std::vector<T>(v.values().begin(), v.values().end());
    }
    return out;
  }

  /// h^[M] of a persona memory.
  std::vector<T> proxy_vector(const MemoryInput& m) const {
    return *encode_passage(memory_passage(m), true).proxy_vector;
  }

  RelevanceOutput<T> relevance(std::span<const T> h_z) const {
    Graph<T> g;
    Var h = g.constant(Tensor<T>({1, h_z.size()}, std::vector<T>(h_z.begin(), h_z.end())));
    return relevance_from(g, h);
  }

  DecodeOutput<T> decode_logits(const Tensor<T>& fused, std::span<const TokenId> input) const {
    Graph<T> g;
    Var f = g.constant(fused);
    Var hidden = decode(g, f, input);
    DecodeOutput<T> out{g.value(lm_logits(g, hidden)), g.value(hidden), std::nullopt};
    if (cfg_.relevance != RelevanceMode::NONE) out.relevance = relevance_from(g, g.slice_rows(hidden, 0, 1));
    return out;
  }

  void validate_decoder_input(std::span<const TokenId> input) const {
    if (input.empty()) throw Error("decoder input is empty");
    std::size_t pos = 0;
    if (cfg_.relevance != RelevanceMode::NONE) {
      if (!is_start_token(input[0])) throw Error("decoder input must begin with a relevance start token");
      pos = 1;
      if (input.size() == 1) return;  // retrieval
    }
    if (input[pos] != id(SpecialToken::CMP) && input[pos] != id(SpecialToken::GNR)) {
      throw Error("decoder input is missing the [CMP]/[GNR] task identifier");
    }
  }

 private:
  Var P(Graph<T>& g, const std::string& name) const {
    return g.param(const_cast<ParameterStore<T>&>(params_).get(name));
  }

  void check_length(std::size_t n, const char* where) const {
    if (n == 0) throw Error(std::string(where) + ": empty input");
    if (n > static_cast<std::size_t>(cfg_.max_positions)) {
      throw Error(detail::concat(where, ": input of ", n, " tokens exceeds max_positions ", cfg_.max_positions,
                                 "; truncate the oldest turns"));
    }
  }

  Var embed(Graph<T>& g, std::span<const TokenId> tokens, const std::string& pos_table) const {
    for (TokenId t : tokens) {
      if (t < 0 || t >= cfg_.vocab_size) throw Error(detail::concat("token id ", t, " outside vocabulary"));
    }
    std::vector<int> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    return g.add(g.embedding(P(g, "tok_emb"), tokens), g.embedding(P(g, pos_table), positions));
  }

  Var norm(Graph<T>& g, Var x, const std::string& p) const {
    return g.layer_norm(x, P(g, p + ".g"), P(g, p + ".b"));
  }

  Var attend(Graph<T>& g, Var query_src, Var kv_src, const std::string& p, bool causal) const {
    Var q = g.linear(query_src, P(g, p + "wq"), P(g, p + "bq"));
    Var k = g.linear(kv_src, P(g, p + "wk"), P(g, p + "bk"));
    Var v = g.linear(kv_src, P(g, p + "wv"), P(g, p + "bv"));
    Var a = g.attention(q, k, v, static_cast<std::size_t>(cfg_.n_heads), causal);
    return g.linear(a, P(g, p + "wo"), P(g, p + "bo"));
  }

  Var feed_forward(Graph<T>& g, Var x, const std::string& p) const {
    return g.linear(g.gelu(g.linear(x, P(g, p + "w1"), P(g, p + "b1"))), P(g, p + "w2"), P(g, p + "b2"));
  }

  RelevanceOutput<T> relevance_from(Graph<T>& g, Var h_z) const {
    const auto logits = g.value(relevance_logits(g, h_z));
    RelevanceOutput<T> out;
    const auto& hz = g.value(h_z);
    out.h_z.assign(hz.values().begin(), hz.values().end());
    out.logits.assign(logits.values().begin(), logits.values().end());
    out.probs = numerics::softmax<T>(out.logits);
    return out;
  }

  void build() {
    std::mt19937_64 rng(cfg_.init_seed);
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto V = static_cast<std::size_t>(cfg_.vocab_size);
    const auto Pn = static_cast<std::size_t>(cfg_.max_positions);
    const auto F = static_cast<std::size_t>(cfg_.ff_width());

    auto normal = [&](std::size_t r, std::size_t c, double sd) {
      std::normal_distribution<double> dist(0.0, sd);
      Tensor<T> t = Tensor<T>::matrix(r, c);
      for (auto& v : t.values()) v = static_cast<T>(dist(rng));
      return t;
    };
    auto weight = [&](const std::string& name, std::size_t in, std::size_t out) {
      params_.add(name, normal(in, out, 1.0 / std::sqrt(double(in))));
    };
    auto bias = [&](const std::string& name, std::size_t n) { params_.add(name, Tensor<T>::matrix(1, n)); };
    auto ln = [&](const std::string& p) {
      params_.add(p + ".g", Tensor<T>::matrix(1, d, T(1)));
      params_.add(p + ".b", Tensor<T>::matrix(1, d));
    };
    auto attn = [&](const std::string& p) {
      for (const char* w : {"q", "k", "v", "o"}) {
        weight(p + "w" + w, d, d);
        bias(p + "b" + w, d);
      }
    };
    auto ff = [&](const std::string& p) {
      weight(p + "w1", d, F);
      bias(p + "b1", F);
      weight(p + "w2", F, d);
      bias(p + "b2", d);
    };

    params_.add("tok_emb", normal(V, d, 0.1));
    // learned, but started from sinusoids so that shifting by one position is
    // close to linear from the first step; rms matches the token table
    auto sinusoid = [&] {
      Tensor<T> t = Tensor<T>::matrix(Pn, d);
      for (std::size_t p = 0; p < Pn; ++p)
        for (std::size_t i = 0; i < d; ++i) {
          const double freq = std::pow(10000.0, -double(i / 2 * 2) / double(d));
          const double v = i % 2 ? std::cos(double(p) * freq) : std::sin(double(p) * freq);
          t.at(p, i) = static_cast<T>(0.1 * std::sqrt(2.0) * v);
        }
      return t;
    };
    params_.add("enc.pos", sinusoid());
    params_.add("dec.pos", sinusoid());
    for (int l = 0; l < cfg_.n_enc_layers; ++l) {
      const std::string p = "enc." + std::to_string(l) + ".";
      ln(p + "ln1");
      attn(p + "attn.");
      ln(p + "ln2");
      ff(p + "ff.");
    }
    ln("enc.ln_f");
    for (int l = 0; l < cfg_.n_dec_layers; ++l) {
      const std::string p = "dec." + std::to_string(l) + ".";
      ln(p + "ln1");
      attn(p + "self.");
      ln(p + "ln2");
      attn(p + "cross.");
      ln(p + "ln3");
      ff(p + "ff.");
    }
    ln("dec.ln_f");
    weight("lm_head.w", d, V);
    bias("lm_head.b", V);
    weight("rel.w1", d, d);
    bias("rel.b1", d);
    weight("rel.w2", d, 2);
    bias("rel.b2", 2);
  }

  ModelConfig cfg_;
  ParameterStore<T> params_;
  mutable std::atomic<std::size_t> encoder_calls_{0};
};

}  // namespace unimc::model

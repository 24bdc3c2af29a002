#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unimc/corpus/corpus.hpp"
#include "unimc/corpus/tokenizer.hpp"
#include "unimc/model/transformer.hpp"

namespace unimc::memory {

using model::Role;
using model::TokenId;

template <class T>
struct PersonaMemory {
  Role owner = Role::USER;
  std::string text;
  std::vector<TokenId> tokens;
  std::vector<T> proxy;       // encoder state at [M]
  std::vector<T> unit_proxy;  // proxy / |proxy|

  model::MemoryInput input() const { return {owner, tokens}; }
  corpus::Persona persona() const { return {owner, text}; }
};

template <class T>
void set_proxy(PersonaMemory<T>& m, std::vector<T> proxy) {
  double n = 0;
  for (T v : proxy) n += double(v) * double(v);
  n = std::sqrt(n);
  m.unit_proxy.resize(proxy.size());
  for (std::size_t i = 0; i < proxy.size(); ++i) m.unit_proxy[i] = n > 0 ? static_cast<T>(proxy[i] / n) : T(0);
  m.proxy = std::move(proxy);
}

/// Tokenize `text` and compute its proxy with `model`.
template <class T>
PersonaMemory<T> embed_memory(Role owner, const std::string& text, const model::Model<T>& model) {
  if (text.empty()) throw Error("embed_memory: empty persona text");
  PersonaMemory<T> m;
  m.owner = owner;
  m.text = text;
  m.tokens = corpus::Tokenizer().tokenize(text);
  set_proxy(m, model.proxy_vector(m.input()));
  return m;
}

struct WriteOutcome {
  enum Kind { APPENDED, REPLACED } kind = APPENDED;
  std::size_t index = 0;  // position of the written entry in its owner's pool
  double similarity = 0;  // max cosine against same-owner entries (0 when empty)

  bool replaced() const noexcept { return kind == REPLACED; }
};

template <class T>
struct ScoredMemory {
  const PersonaMemory<T>* memory = nullptr;
  Role owner = Role::USER;
  std::size_t index = 0;  // position within its owner's pool
  double score = 0;       // z=1 logit

  std::string id() const { return std::string(model::role_name(owner)) + ":" + std::to_string(index); }
};

/// User and bot persona memories. Capacity is unbounded; a write whose proxy
/// is more similar than `lambda` to an existing same-owner entry replaces the
/// most similar one.
template <class T>
class MemoryPool {
 public:
  explicit MemoryPool(double lambda = 0.9) : lambda_(lambda) {}

  double lambda() const noexcept { return lambda_; }
  const std::vector<PersonaMemory<T>>& memories(Role owner) const {
    return owner == Role::USER ? user_ : bot_;
  }
  std::size_t size() const noexcept { return user_.size() + bot_.size(); }
  bool empty() const noexcept { return size() == 0; }

  WriteOutcome write(PersonaMemory<T> m) {
    auto& pool = owner_pool(m.owner);
    WriteOutcome out;
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const double s = numerics::cosine_similarity<double>(to_double(pool[i].unit_proxy), to_double(m.unit_proxy));
      if (!best || s > out.similarity) {
        best = i;
        out.similarity = s;
      }
    }
    if (best && out.similarity > lambda_) {
      pool[*best] = std::move(m);
      out.kind = WriteOutcome::REPLACED;
      out.index = *best;
    } else {
      pool.push_back(std::move(m));
      out.kind = WriteOutcome::APPENDED;
      out.index = pool.size() - 1;
    }
    return out;
  }

  /// Recompute every proxy, e.g. after loading a different checkpoint.
  void reembed(const model::Model<T>& model) {
    for (auto* pool : {&user_, &bot_})
      for (auto& m : *pool) set_proxy(m, model.proxy_vector(m.input()));
  }

  /// Owner-then-index listing of all entries (user pool first).
  std::vector<ScoredMemory<T>> entries() const {
    std::vector<ScoredMemory<T>> out;
    for (Role owner : {Role::USER, Role::BOT}) {
      const auto& pool = memories(owner);
      for (std::size_t i = 0; i < pool.size(); ++i) out.push_back({&pool[i], owner, i, 0.0});
    }
    return out;
  }

  void persist(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write memory pool " + path);
    for (const auto& e : entries()) os << model::role_name(e.owner) << '\t' << e.memory->text << '\n';
    if (!os) throw Error("write failed for memory pool " + path);
  }

  /// Inverse of persist(); proxies are recomputed with `model`.
  static MemoryPool load(const std::string& path, const model::Model<T>& model, double lambda = 0.9) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read memory pool " + path);
    MemoryPool pool(lambda);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto where = path + ":" + std::to_string(lineno);
      const auto tab = line.find('\t');
      if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
        throw FormatError(where + ": expected owner<TAB>text");
      }
      const auto owner = line.substr(0, tab);
      if (owner != "user" && owner != "bot") throw FormatError(where + ": unknown owner '" + owner + "'");
      const auto text = line.substr(tab + 1);
      if (text.empty()) throw FormatError(where + ": empty persona text");
      // no duplicate check: the file order is the pool order
      pool.owner_pool(owner == "user" ? Role::USER : Role::BOT)
          .push_back(embed_memory(owner == "user" ? Role::USER : Role::BOT, text, model));
    }
    return pool;
  }

 private:
  std::vector<PersonaMemory<T>>& owner_pool(Role owner) { return owner == Role::USER ? user_ : bot_; }

  static std::vector<double> to_double(const std::vector<T>& v) { return {v.begin(), v.end()}; }

  double lambda_;
  std::vector<PersonaMemory<T>> user_, bot_;
};

/// Relevance score of one memory for a context: the z=1 logit of the
/// retrieval forward pass (decoder input is the start token alone). Without a
/// relevance head, cosine between the memory proxy and the mean context state.
template <class T>
double relevance_score(const model::Model<T>& m, std::span<const model::Utterance> context,
                       const model::MemoryInput& memory) {
  numerics::Graph<T> g;
  const model::MemoryInput mems[] = {memory};
  if (m.config().relevance == model::RelevanceMode::NONE) {
    const auto ctx = m.encode_passage(model::context_passage(context, false, m.config().max_positions), false);
    std::vector<T> mean(ctx.states.cols(), T(0));
    for (std::size_t r = 0; r < ctx.states.rows(); ++r)
      for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += ctx.states.at(r, c) / T(ctx.states.rows());
    const auto proxy = m.proxy_vector(memory);
    return numerics::cosine_similarity<T>(proxy, mean);
  }
  numerics::Var fused = m.encode_inputs(g, context, mems, false);
  const auto input = model::decoder_input(m.config().relevance, model::Task::MR);
  numerics::Var hidden = m.decode(g, fused, input);
  return g.value(m.relevance_logits(g, g.slice_rows(hidden, 0, 1)))[1];
}

/// Every memory of both pools scored against `context` (which ends with the
/// query), sorted by descending score; ties keep pool order (user first).
template <class T>
std::vector<ScoredMemory<T>> rank(const MemoryPool<T>& pool, std::span<const model::Utterance> context,
                                  const model::Model<T>& m) {
  auto out = pool.entries();
  for (auto& e : out) e.score = relevance_score(m, context, e.memory->input());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  return out;
}

}  // namespace unimc::memory

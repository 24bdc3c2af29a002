#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "unimc/memory/memory_pool.hpp"

using namespace unimc;
using memory::MemoryPool;
using memory::PersonaMemory;
using memory::WriteOutcome;
using model::Role;

namespace {

model::ModelConfig tiny(std::uint64_t seed = 2022) {
  model::ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.max_positions = 96;
  c.init_seed = seed;
  return c;
}

PersonaMemory<double> with_proxy(Role owner, const std::string& text, std::vector<double> proxy) {
  PersonaMemory<double> m;
  m.owner = owner;
  m.text = text;
  m.tokens = corpus::Tokenizer().tokenize(text);
  memory::set_proxy(m, std::move(proxy));
  return m;
}

std::vector<double> axis(std::size_t i, std::size_t n = 4) {
  std::vector<double> v(n, 0);
  v[i] = 1;
  return v;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<model::Utterance> ctx(const std::string& q) { return {{Role::USER, corpus::Tokenizer().tokenize(q)}}; }

}  // namespace

TEST(Embed, ProxyShapeDeterminismAndSelfSimilarity) {
  model::Model<double> m(tiny());
  const auto a = memory::embed_memory(Role::USER, "i have a cat.", m);
  const auto b = memory::embed_memory(Role::USER, "i have a cat.", m);
  EXPECT_EQ(a.proxy.size(), 16u);
  EXPECT_EQ(a.proxy, b.proxy);
  EXPECT_NEAR(numerics::cosine_similarity<double>(a.proxy, a.proxy), 1.0, 1e-12);
  EXPECT_THROW(memory::embed_memory(Role::USER, "", m), Error);
}

TEST(Cosine, IsSymmetric) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(16), b(16);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng);
    EXPECT_NEAR(numerics::cosine_similarity<double>(a, b), numerics::cosine_similarity<double>(b, a), 1e-9);
  }
}

TEST(Write, EmptyPoolAppends) {
  MemoryPool<double> pool;
  const auto r = pool.write(with_proxy(Role::USER, "i like tea.", axis(0)));
  EXPECT_EQ(r.kind, WriteOutcome::APPENDED);
  EXPECT_EQ(pool.size(), 1u);
}

TEST(Write, SamePersonaTwiceReplaces) {
  model::Model<double> m(tiny());
  // untrained proxies of different sentences sit around 0.95 apart
  MemoryPool<double> pool(0.99);
  pool.write(memory::embed_memory(Role::USER, "i have a cat.", m));
  pool.write(memory::embed_memory(Role::USER, "i work as a nurse.", m));
  const auto r = pool.write(memory::embed_memory(Role::USER, "i have a cat.", m));
  EXPECT_EQ(r.kind, WriteOutcome::REPLACED);
  EXPECT_EQ(r.index, 0u);
  EXPECT_NEAR(r.similarity, 1.0, 1e-12);
  EXPECT_EQ(pool.memories(Role::USER).size(), 2u);
}

TEST(Write, OrthogonalProxyAppends) {
  MemoryPool<double> pool(0.9);
  pool.write(with_proxy(Role::USER, "a.", axis(0)));
  const auto r = pool.write(with_proxy(Role::USER, "b.", axis(1)));
  EXPECT_EQ(r.kind, WriteOutcome::APPENDED);
  EXPECT_EQ(r.similarity, 0.0);
  EXPECT_EQ(pool.size(), 2u);
}

TEST(Write, ThresholdIsStrict) {
  MemoryPool<double> pool(0.6);
  pool.write(with_proxy(Role::USER, "a.", {1, 0}));
  // cos = 0.6 exactly is not above lambda
  EXPECT_EQ(pool.write(with_proxy(Role::USER, "b.", {0.6, 0.8})).kind, WriteOutcome::APPENDED);
  EXPECT_EQ(pool.write(with_proxy(Role::USER, "c.", {0.61, 0.79})).kind, WriteOutcome::REPLACED);
}

TEST(Write, ReplacesMostSimilarLowestIndexOnTie) {
  MemoryPool<double> pool(0.5);
  pool.write(with_proxy(Role::USER, "x.", {1, 0, 0}));
  pool.write(with_proxy(Role::USER, "y.", {0, 1, 0}));
  pool.write(with_proxy(Role::USER, "z.", {0, 1, 0.01}));  // replaces y
  ASSERT_EQ(pool.size(), 2u);
  const auto r = pool.write(with_proxy(Role::USER, "w.", {1, 1, 0}));  // cos 0.707 with both
  ASSERT_EQ(r.kind, WriteOutcome::REPLACED);
  const auto r2 = pool.write(with_proxy(Role::USER, "v.", {0, 0, 1}));
  EXPECT_EQ(r2.kind, WriteOutcome::APPENDED);
  EXPECT_EQ(pool.memories(Role::USER)[r.index].text, "w.");

  MemoryPool<double> tie(0.5);
  tie.write(with_proxy(Role::USER, "x.", {1, 0}));
  tie.write(with_proxy(Role::USER, "y.", {0, 1}));
  const auto t = tie.write(with_proxy(Role::USER, "w.", {1, 1}));
  EXPECT_EQ(t.index, 0u);
  EXPECT_EQ(tie.memories(Role::USER)[1].text, "y.");
}

TEST(Write, OnlySameOwnerEntriesAreCompared) {
  MemoryPool<double> pool(0.9);
  pool.write(with_proxy(Role::USER, "i like tea.", axis(0)));
  const auto r = pool.write(with_proxy(Role::BOT, "i like tea.", axis(0)));
  EXPECT_EQ(r.kind, WriteOutcome::APPENDED);
  EXPECT_EQ(pool.memories(Role::USER).size(), 1u);
  EXPECT_EQ(pool.memories(Role::BOT).size(), 1u);
}

TEST(Write, SizeEqualsAppendCount) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n;
  MemoryPool<double> pool(0.9);
  std::size_t appends = 0;
  for (int i = 0; i < 300; ++i) {
    std::vector<double> v(3);
    for (auto& x : v) x = n(rng);
    const auto r = pool.write(with_proxy(i % 2 ? Role::BOT : Role::USER, "m" + std::to_string(i) + ".", v));
    if (r.kind == WriteOutcome::APPENDED) {
      ++appends;
      EXPECT_LE(r.similarity, 0.9);
    } else {
      EXPECT_GT(r.similarity, 0.9);
    }
    EXPECT_EQ(pool.size(), appends);
  }
  EXPECT_LT(appends, 300u);
}

TEST(Rank, SingletonAndEmpty) {
  model::Model<double> m(tiny());
  MemoryPool<double> pool;
  EXPECT_TRUE(memory::rank(pool, ctx("hi."), m).empty());
  pool.write(memory::embed_memory(Role::BOT, "i am a chef.", m));
  const auto r = memory::rank(pool, ctx("hi."), m);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].memory->text, "i am a chef.");
  EXPECT_EQ(r[0].id(), "bot:0");
}

// Brute-force oracle: scores computed one memory at a time, sorted by hand.
TEST(Rank, MatchesBruteForceSortAndLeavesPoolUntouched) {
  model::Model<double> m(tiny());
  MemoryPool<double> pool(1.0);
  for (const char* t : {"i have a cat.", "i like pizza.", "i am from lima.", "i enjoy chess."})
    pool.write(memory::embed_memory(Role::USER, t, m));
  for (const char* t : {"i work as a pilot.", "i have a dog."}) pool.write(memory::embed_memory(Role::BOT, t, m));
  const auto before = pool.entries();
  const auto context = ctx("what should i cook tonight?");
  const auto ranked = memory::rank(pool, context, m);

  std::vector<std::pair<double, std::string>> brute;
  for (const auto& e : before) brute.emplace_back(memory::relevance_score(m, context, e.memory->input()), e.id());
  for (std::size_t i = 0; i < brute.size(); ++i)
    for (std::size_t j = i + 1; j < brute.size(); ++j)
      if (brute[j].first > brute[i].first) {
        auto moved = brute[j];
        brute.erase(brute.begin() + static_cast<std::ptrdiff_t>(j));
        brute.insert(brute.begin() + static_cast<std::ptrdiff_t>(i), moved);
      }
  ASSERT_EQ(ranked.size(), brute.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    EXPECT_EQ(ranked[i].id(), brute[i].second);
    EXPECT_EQ(ranked[i].score, brute[i].first);
  }
  const auto after = pool.entries();
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(before[i].memory, after[i].memory);
    EXPECT_EQ(before[i].memory->text, after[i].memory->text);
  }
}

TEST(Rank, EqualScoresKeepPoolOrder) {
  model::Model<double> m(tiny());
  for (const char* n : {"rel.w2", "rel.b2"}) m.params().get(n).value.fill(0);
  MemoryPool<double> pool(1.0);
  for (const char* t : {"c.", "a.", "b."}) pool.write(memory::embed_memory(Role::USER, t, m));
  pool.write(memory::embed_memory(Role::BOT, "d.", m));
  const auto r = memory::rank(pool, ctx("hi."), m);
  std::vector<std::string> ids;
  for (const auto& e : r) ids.push_back(e.id());
  EXPECT_EQ(ids, (std::vector<std::string>{"user:0", "user:1", "user:2", "bot:0"}));
}

TEST(Persist, RoundTripsByteExactly) {
  model::Model<double> m(tiny());
  MemoryPool<double> pool(0.99);
  pool.write(memory::embed_memory(Role::USER, "i have a cat.", m));
  pool.write(memory::embed_memory(Role::BOT, "i am from cairo.", m));
  pool.write(memory::embed_memory(Role::USER, "i enjoy hiking.", m));
  const auto path = ::testing::TempDir() + "pool.tsv";
  const auto again = ::testing::TempDir() + "pool2.tsv";
  pool.persist(path);
  const auto back = MemoryPool<double>::load(path, m);
  back.persist(again);
  EXPECT_EQ(slurp(path), slurp(again));
  ASSERT_EQ(back.size(), 3u);
  for (Role o : {Role::USER, Role::BOT})
    for (std::size_t i = 0; i < pool.memories(o).size(); ++i) {
      EXPECT_EQ(back.memories(o)[i].text, pool.memories(o)[i].text);
      EXPECT_EQ(back.memories(o)[i].proxy, pool.memories(o)[i].proxy);
    }
}

TEST(Persist, LoadRecomputesProxiesWithTheGivenModel) {
  model::Model<double> a(tiny(1)), b(tiny(2));
  MemoryPool<double> pool;
  pool.write(memory::embed_memory(Role::USER, "i have a cat.", a));
  const auto path = ::testing::TempDir() + "pool_b.tsv";
  pool.persist(path);
  const auto back = MemoryPool<double>::load(path, b);
  EXPECT_EQ(back.memories(Role::USER)[0].text, "i have a cat.");
  EXPECT_NE(back.memories(Role::USER)[0].proxy, pool.memories(Role::USER)[0].proxy);
}

TEST(Persist, EmptyPoolRoundTrips) {
  model::Model<double> m(tiny());
  MemoryPool<double> pool;
  const auto path = ::testing::TempDir() + "pool_empty.tsv";
  pool.persist(path);
  EXPECT_EQ(slurp(path), "");
  EXPECT_TRUE(MemoryPool<double>::load(path, m).empty());
}

TEST(Persist, MalformedFileNamesTheLine) {
  model::Model<double> m(tiny());
  const auto path = ::testing::TempDir() + "pool_bad.tsv";
  {
    std::ofstream os(path);
    os << "user\ti have a cat.\n" << "robot\ti am a chef.\n";
  }
  try {
    MemoryPool<double>::load(path, m);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
}

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "gradcheck.hpp"
#include "unimc/numerics/adam.hpp"
#include "unimc/numerics/checkpoint.hpp"
#include "unimc/numerics/graph.hpp"

using namespace unimc;
using namespace unimc::numerics;

namespace {

Tensor<double> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0, sd);
  auto t = Tensor<double>::matrix(r, c);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("unimc_numerics_" + name);
}

}  // namespace

TEST(Tensor, RejectsZeroExtentAndMismatchedValues) {
  EXPECT_THROW(Tensor<float>({0, 3}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Forward, MatmulWithIdentityIsIdentity) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto id = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  EXPECT_EQ(g.value(g.matmul(a, id)), g.value(a));
}

TEST(Forward, SoftmaxOfEqualLogitsIsUniform) {
  Graph<double> g;
  auto s = g.softmax(g.constant(Tensor<double>({1, 2}, {0, 0})));
  EXPECT_DOUBLE_EQ(g.value(s)[0], 0.5);
  EXPECT_DOUBLE_EQ(g.value(s)[1], 0.5);
}

TEST(Forward, SoftmaxRowsAreDistributions) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Graph<float> g;
    auto x = random_matrix(3, 11, rng, 8.0).cast<float>();
    const auto& y = g.value(g.softmax(g.constant(x)));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (float v : y.row(r)) {
        EXPECT_GE(v, 0.0f);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Forward, LayerNormOfConstantRowIsZero) {
  Graph<double> g;
  auto x = g.constant(Tensor<double>({1, 4}, {3, 3, 3, 3}));
  auto gamma = g.constant(Tensor<double>({1, 4}, {1, 1, 1, 1}));
  auto beta = g.constant(Tensor<double>({1, 4}, {0, 0, 0, 0}));
  for (double v : g.value(g.layer_norm(x, gamma, beta)).values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, ShapeMismatchNamesOpAndShapes) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>::matrix(2, 3));
  auto b = g.constant(Tensor<double>::matrix(2, 3));
  try {
    g.matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
  }
  EXPECT_THROW(g.add(a, g.constant(Tensor<double>::matrix(3, 2))), ShapeError);
}

TEST(Forward, DeterministicGivenSameInputs) {
  std::mt19937_64 rng(3);
  const auto q = random_matrix(5, 8, rng);
  const auto k = random_matrix(7, 8, rng);
  auto run = [&] {
    Graph<double> g;
    auto Q = g.constant(q);
    auto K = g.constant(k);
    return g.value(g.attention(Q, K, K, 2, false));
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, SumOfSquares) {
  Parameter<double> x("x", Tensor<double>({1, 2}, {1, 2}));
  Graph<double> g;
  auto v = g.param(x);
  g.backward(g.sum(g.mul(v, v)));
  EXPECT_DOUBLE_EQ(x.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad[1], 4.0);
}

TEST(Backward, CrossEntropyOfUniformLogitsIsLog4) {
  for (int target = 0; target < 4; ++target) {
    Graph<double> g;
    auto logits = g.constant(Tensor<double>::matrix(1, 4, 0.7));
    const int t[] = {target};
    EXPECT_NEAR(g.value(g.cross_entropy(logits, t))[0], std::log(4.0), 1e-12);
  }
}

TEST(Backward, RequiresScalarLoss) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>::matrix(2, 2, 1.0));
  EXPECT_THROW(g.backward(a), ShapeError);
}

TEST(Backward, UnreachedParametersKeepZeroGradient) {
  Parameter<double> used("used", Tensor<double>({1, 2}, {1, 2}));
  Parameter<double> unused("unused", Tensor<double>({1, 2}, {3, 4}));
  Graph<double> g;
  g.param(unused);
  g.backward(g.sum(g.param(used)));
  EXPECT_EQ(unused.grad, Tensor<double>({1, 2}));
}

// Every op against the finite-difference oracle in 64-bit.
TEST(GradCheck, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  Parameter<double> a("a", random_matrix(4, 6, rng));
  Parameter<double> b("b", random_matrix(6, 6, rng));
  Parameter<double> c("c", random_matrix(4, 6, rng));
  Parameter<double> row("row", random_matrix(1, 6, rng));
  Parameter<double> gamma("gamma", random_matrix(1, 6, rng));
  Parameter<double> beta("beta", random_matrix(1, 6, rng));
  Parameter<double> table("table", random_matrix(5, 6, rng));
  Parameter<double> kv("kv", random_matrix(7, 6, rng));
  const std::vector<int> ids{4, 0, 2, 2};
  const std::vector<int> targets{1, 5, 0, 3, 2};
  std::vector<std::uint8_t> mask(24, 0);
  mask[3] = mask[10] = 1;
  auto weights = random_matrix(5, 6, rng);

  auto loss = [&](Graph<double>& g) {
    Var A = g.param(a), B = g.param(b), C = g.param(c), R = g.param(row);
    Var h = g.linear(A, B, R);
    h = g.add(h, g.mul(C, g.matmul(A, B)));
    h = g.layer_norm(h, g.param(gamma), g.param(beta));
    h = g.gelu(h);
    h = g.add_row(g.tanh(h), R);
    h = g.masked_fill(h, mask, 0.25);
    h = g.add(h, g.embedding(g.param(table), ids));
    Var self = g.attention(h, h, h, 2, true);
    Var cross = g.attention(self, g.param(kv), g.param(kv), 3, false);
    Var s = g.softmax(g.scale(cross, 0.5));
    Var t = g.transpose(g.concat_rows(std::vector<Var>{s, g.slice_rows(h, 1, 3)}));
    Var logits = g.slice_rows(t, 0, 5);
    Var ce = g.cross_entropy(logits, targets);
    return g.add(ce, g.sum(g.mul(g.slice_rows(t, 1, 6), g.constant(weights))));
  };
  const auto r = oracle::grad_check({&a, &b, &c, &row, &gamma, &beta, &table, &kv}, loss);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "] analytic " << r.analytic
                                   << " numeric " << r.numeric;
}

TEST(GradCheck, TwoLayerMlp) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    Parameter<double> w1("w1", random_matrix(5, 8, rng, 0.5));
    Parameter<double> b1("b1", random_matrix(1, 8, rng, 0.1));
    Parameter<double> w2("w2", random_matrix(8, 3, rng, 0.5));
    Parameter<double> b2("b2", random_matrix(1, 3, rng, 0.1));
    const auto x = random_matrix(6, 5, rng);
    const std::vector<int> y{0, 2, 1, 1, 0, 2};
    auto loss = [&](Graph<double>& g) {
      Var h = g.gelu(g.linear(g.constant(x), g.param(w1), g.param(b1)));
      return g.cross_entropy(g.linear(h, g.param(w2), g.param(b2)), y);
    };
    const auto r = oracle::grad_check({&w1, &b1, &w2, &b2}, loss);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter<double> p("p", Tensor<double>::scalar(1.0));
  p.grad[0] = 1.0;
  AdamConfig cfg;
  adam_step<double>(std::span<Parameter<double>* const>(std::vector<Parameter<double>*>{&p}), cfg);
  // m_hat = 1, v_hat = 1  ->  delta = -lr / (1 + eps)
  EXPECT_NEAR(p.value[0] - 1.0, -5e-5 / (1 + 1e-8), 1e-15);
  EXPECT_EQ(p.step_count, 1);
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Parameter<float> p("p", Tensor<float>({1, 3}, {1, -2, 3}));
  std::vector<Parameter<float>*> ps{&p};
  for (int i = 0; i < 3; ++i) adam_step<float>(ps, AdamConfig{});
  EXPECT_EQ(p.value, Tensor<float>({1, 3}, {1, -2, 3}));
  EXPECT_EQ(p.step_count, 3);
}

TEST(Adam, IdenticalCopiesStayIdentical) {
  Parameter<float> a("a", Tensor<float>({1, 2}, {0.3f, -0.7f}));
  Parameter<float> b("b", Tensor<float>({1, 2}, {0.3f, -0.7f}));
  std::vector<Parameter<float>*> ps{&a, &b};
  for (int i = 0; i < 5; ++i) {
    a.grad[0] = b.grad[0] = 0.1f * float(i);
    a.grad[1] = b.grad[1] = -0.2f;
    adam_step<float>(ps, AdamConfig{1e-2});
  }
  EXPECT_EQ(a.value, b.value);
}

TEST(Adam, NonFiniteGradientAbortsStep) {
  Parameter<double> a("a", Tensor<double>::scalar(1.0));
  Parameter<double> b("b", Tensor<double>::scalar(2.0));
  a.grad[0] = 1.0;
  b.grad[0] = std::nan("");
  std::vector<Parameter<double>*> ps{&a, &b};
  EXPECT_THROW(adam_step<double>(ps, AdamConfig{}), NumericError);
  EXPECT_EQ(a.value[0], 1.0);
  EXPECT_EQ(a.step_count, 0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(9);
  ParameterStore<float> store;
  store.add("w", random_matrix(3, 4, rng).cast<float>());
  store.add("b", random_matrix(1, 4, rng).cast<float>());
  const auto path = temp_path("rt.ckpt").string();
  save_checkpoint(path, store, {{"d_model", "4"}});

  ParameterStore<float> other;
  other.add("w", Tensor<float>::matrix(3, 4));
  other.add("b", Tensor<float>::matrix(1, 4));
  load_checkpoint(path, other);
  EXPECT_EQ(other.get("w").value, store.get("w").value);
  EXPECT_EQ(other.get("b").value, store.get("b").value);
  EXPECT_EQ(read_manifest(manifest_path(path)).at("d_model"), "4");

  const auto path2 = temp_path("rt2.ckpt").string();
  save_checkpoint(path2, other, {{"d_model", "4"}});
  EXPECT_EQ(file_hash(path), file_hash(path2));
}

TEST(Checkpoint, RejectsShapeMismatchAndGarbage) {
  ParameterStore<double> store;
  store.add("w", Tensor<double>::matrix(2, 2, 1.0));
  const auto path = temp_path("bad.ckpt").string();
  save_checkpoint(path, store, {});
  ParameterStore<double> wrong;
  wrong.add("w", Tensor<double>::matrix(2, 3));
  EXPECT_THROW(load_checkpoint(path, wrong), FormatError);

  const auto garbage = temp_path("garbage.ckpt").string();
  std::ofstream(garbage) << "not a checkpoint";
  EXPECT_THROW(read_checkpoint(garbage), FormatError);
}

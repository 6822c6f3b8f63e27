#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "ctsearch/autodiff.hpp"

using namespace ctsearch;
using namespace ctsearch::ad;

namespace {

Parameter random_param(const std::string& name, Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return {name, std::move(t)};
}

Tensor random_tensor(Shape shape, Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

// Weighted sum keeps the loss O(1) and every output coordinate relevant.
Var project(Tape& tape, const Var& x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, tape.constant(random_tensor(x.shape(), rng))));
}

}  // namespace

TEST(Primitives, AnalyticValues) {
  Tape tape;
  const auto p = tape.constant(Tensor::scalar(0.5));
  EXPECT_NEAR(bce_loss(p, Tensor::scalar(1.0)).value()[0], std::log(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(sigmoid(tape.constant(Tensor::scalar(0.0))).value()[0], 0.5);
  const auto x = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  EXPECT_DOUBLE_EQ(mae_loss(x, x).value()[0], 0.0);
  const auto saturated = bce_loss(tape.constant(Tensor::scalar(0.0)), Tensor::scalar(1.0));
  EXPECT_TRUE(std::isfinite(saturated.value()[0]));
  EXPECT_NEAR(saturated.value()[0], -std::log(1e-7), 1e-9);
}

TEST(Primitives, ShapeMismatchNamesBothShapes) {
  Tape tape;
  const auto a = tape.constant(Tensor({2, 3}));
  const auto b = tape.constant(Tensor({4, 2}));
  try {
    matmul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4,2]"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), Error);
}

TEST(Backward, SumAndMeanSquare) {
  Tape tape;
  const auto x = tape.input(Tensor({4}, {1, -2, 3, 0.5}));
  tape.backward(sum(x));
  for (double g : tape.gradient(x).values()) EXPECT_DOUBLE_EQ(g, 1.0);

  Tape tape2;
  const auto y = tape2.input(Tensor({4}, {1, -2, 3, 0.5}));
  tape2.backward(mean(mul(y, y)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(tape2.gradient(y)[i], 2.0 * y.value()[i] / 4.0, 1e-15);
}

TEST(Backward, RejectsNonScalar) {
  Tape tape;
  const auto x = tape.input(Tensor({3}, 1.0));
  EXPECT_THROW(tape.backward(x), Error);
}

TEST(Backward, FanOutAccumulates) {
  Tape tape;
  const auto x = tape.input(Tensor({2}, {3.0, 4.0}));
  tape.backward(sum(add(x, x)));
  EXPECT_DOUBLE_EQ(tape.gradient(x)[0], 2.0);
}

TEST(GradCheck, SumOfSquaresExact) {
  Rng rng(1);
  auto p = random_param("p", {5}, rng);
  const double err = grad_check([&](Tape& t) { auto v = t.parameter(p); return sum(mul(v, v)); }, {&p});
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, ThreeLayerMlp) {
  Rng rng(2);
  auto x = random_param("x", {4, 6}, rng);
  auto w1 = random_param("w1", {6, 8}, rng, 0.5), b1 = random_param("b1", {8}, rng, 0.1);
  auto w2 = random_param("w2", {8, 8}, rng, 0.5), b2 = random_param("b2", {8}, rng, 0.1);
  auto w3 = random_param("w3", {8, 1}, rng, 0.5);
  auto f = [&](Tape& t) {
    auto h = tanh(add(matmul(t.parameter(x), t.parameter(w1)), t.parameter(b1)));
    h = sigmoid(add(matmul(h, t.parameter(w2)), t.parameter(b2)));
    return mean(matmul(h, t.parameter(w3)));
  };
  EXPECT_LT(grad_check(f, {&x, &w1, &b1, &w2, &b2, &w3}), 1e-4);
}

// Every primitive against central differences on 50 random shapes/values.
TEST(GradCheck, AllPrimitivesRandomInstances) {
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = dim(rng), c = dim(rng), k = dim(rng);
    auto a = random_param("a", {r, c}, rng);
    auto a2 = random_param("a2", {r, c}, rng);
    auto b = random_param("b", {c, k}, rng);
    auto bias = random_param("bias", {c}, rng);
    auto s = random_param("s", {1}, rng);
    auto probs = random_param("p", {r, c}, rng);
    for (double& v : probs.value.values()) v = 0.05 + 0.9 / (1.0 + std::exp(-v));
    Tensor labels({r, c});
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (i + trial) % 2;
    const std::uint64_t seed = 100 + trial;
    const std::vector<std::pair<const char*, LossFn>> cases = {
        {"matmul", [&](Tape& t) { return project(t, matmul(t.parameter(a), t.parameter(b)), seed); }},
        {"transpose", [&](Tape& t) { return project(t, transpose(t.parameter(a)), seed); }},
        {"add", [&](Tape& t) { return project(t, add(t.parameter(a), t.parameter(a2)), seed); }},
        {"add_bias", [&](Tape& t) { return project(t, add(t.parameter(a), t.parameter(bias)), seed); }},
        {"sub", [&](Tape& t) { return project(t, sub(t.parameter(a), t.parameter(a2)), seed); }},
        {"mul", [&](Tape& t) { return project(t, mul(t.parameter(a), t.parameter(a2)), seed); }},
        {"scale", [&](Tape& t) { return project(t, scale(t.parameter(a), -1.7), seed); }},
        {"scale_by", [&](Tape& t) { return project(t, scale_by(t.parameter(a), t.parameter(s)), seed); }},
        {"tanh", [&](Tape& t) { return project(t, tanh(t.parameter(a)), seed); }},
        {"sigmoid", [&](Tape& t) { return project(t, sigmoid(t.parameter(a)), seed); }},
        {"relu", [&](Tape& t) { return project(t, relu(t.parameter(a)), seed); }},
        {"softmax", [&](Tape& t) { return project(t, softmax_last(t.parameter(a)), seed); }},
        {"layer_norm", [&](Tape& t) { return project(t, layer_norm_last(t.parameter(a)), seed); }},
        {"concat_last",
         [&](Tape& t) { return project(t, concat_last({t.parameter(a), t.parameter(a2)}), seed); }},
        {"concat_rows",
         [&](Tape& t) { return project(t, concat_rows({t.parameter(a), t.parameter(a2)}), seed); }},
        {"mean", [&](Tape& t) { return mean(mul(t.parameter(a), t.parameter(a2))); }},
        {"mae", [&](Tape& t) { return mae_loss(t.parameter(a), t.parameter(a2)); }},
        {"bce", [&](Tape& t) { return bce_loss(t.parameter(probs), labels); }},
        {"gather_rows",
         [&](Tape& t) { return project(t, gather_rows(t.parameter(a), {r - 1, 0, r - 1}), seed); }},
        {"graph_propagate",
         [&](Tape& t) { return project(t, graph_propagate(t.parameter(a), {{0, r - 1}, {r - 1, 0}, {0, 0}}), seed); }},
    };
    for (const auto& [name, f] : cases) {
      const double err = grad_check(f, {&a, &a2, &b, &bias, &s, &probs});
      EXPECT_LT(err, 1e-4) << name << " trial " << trial;
      worst = std::max(worst, err);
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(GradCheck, SequencePrimitives) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + trial % 2, N = 2 + trial % 3, P = 3 + trial % 4, H = 2 + trial % 3;
    auto x = random_param("x", {B, N, P, H}, rng);
    auto adj = random_param("adj", {N, N}, rng);
    auto wq = random_param("wq", {H, H}, rng, 0.7);
    auto wk = random_param("wk", {H, H}, rng, 0.7);
    const std::uint64_t seed = 500 + trial;
    const std::vector<std::pair<const char*, LossFn>> cases = {
        {"time_shift", [&](Tape& t) { return project(t, time_shift(t.parameter(x), 1 + trial % 3), seed); }},
        {"node_mix", [&](Tape& t) { return project(t, node_mix(t.parameter(adj), t.parameter(x)), seed); }},
        {"swap", [&](Tape& t) { return project(t, swap_series_time(t.parameter(x)), seed); }},
        {"select_time", [&](Tape& t) { return project(t, select_time(t.parameter(x), P - 1), seed); }},
        {"attention_causal",
         [&](Tape& t) {
           auto xv = t.parameter(x);
           return project(t, attention(matmul(xv, t.parameter(wq)), matmul(xv, t.parameter(wk)), xv, true), seed);
         }},
        {"attention_full",
         [&](Tape& t) {
           auto xv = t.parameter(x);
           return project(t, attention(matmul(xv, t.parameter(wq)), matmul(xv, t.parameter(wk)), xv, false), seed);
         }},
    };
    for (const auto& [name, f] : cases) EXPECT_LT(grad_check(f, {&x, &adj, &wq, &wk}), 1e-4) << name;
  }
}

TEST(GradCheck, RejectsNonFiniteLoss) {
  Parameter p{"p", Tensor::scalar(0.0)};
  auto f = [&](Tape& t) {
    auto v = t.parameter(p);
    return map_unary(
        v, [](double x) { return x > 0 ? std::numeric_limits<double>::infinity() : x; },
        [](double, double) { return 1.0; });
  };
  EXPECT_THROW(grad_check(f, {&p}), Error);
}

TEST(Deterministic, ForwardBackwardBitwise) {
  auto run = [] {
    Rng rng(9);
    auto w = random_param("w", {5, 5}, rng);
    auto x = random_param("x", {3, 5}, rng);
    Tape tape;
    auto loss = mean(tanh(matmul(tape.parameter(x), tape.parameter(w))));
    auto grads = tape.backward(loss);
    return std::pair{loss.value()[0], *grads.find(w)};
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Adam, ZeroGradientIsNoop) {
  Parameter p{"p", Tensor({3}, {1.0, -2.0, 0.5})};
  const Tensor before = p.value;
  AdamState state;
  Gradients none;
  std::vector<Parameter*> params{&p};
  adam_step(params, none, state, {.lr = 0.1});
  EXPECT_EQ(p.value, before);
}

TEST(Adam, FirstStepMagnitudeIsLr) {
  Parameter p{"p", Tensor::scalar(0.0)};
  Gradients g;
  g.accumulate(p, Tensor::scalar(1.0));
  AdamState state;
  std::vector<Parameter*> params{&p};
  adam_step(params, g, state, {.lr = 0.1});
  EXPECT_NEAR(p.value[0], -0.1, 1e-6);
}

TEST(Adam, ConvergesOnQuadratic) {
  Parameter p{"x", Tensor::scalar(3.0)};
  AdamState state;
  std::vector<Parameter*> params{&p};
  int steps = 0;
  for (; steps < 500 && std::abs(p.value[0]) >= 1e-3; ++steps) {
    Tape tape;
    auto x = tape.parameter(p);
    auto grads = tape.backward(mul(x, x));
    adam_step(params, grads, state, {.lr = 0.05});
  }
  EXPECT_LT(std::abs(p.value[0]), 1e-3);
  EXPECT_LT(steps, 500);
}

TEST(Checkpoint, RoundTripAndShapeGuard) {
  Rng rng(10);
  auto w = random_param("w", {3, 4}, rng);
  auto b = random_param("b", {4}, rng);
  const auto base = std::filesystem::temp_directory_path() / "ctsearch_ckpt_test";
  save_checkpoint(base, {&w, &b}, {{"kind", "test"}});
  Parameter w2{"w", Tensor({3, 4})}, b2{"b", Tensor({4})};
  const auto header = load_checkpoint(base, {&w2, &b2});
  EXPECT_EQ(header["kind"], "test");
  EXPECT_EQ(w2.value, w.value);
  EXPECT_EQ(b2.value, b.value);
  EXPECT_EQ(std::filesystem::file_size(std::filesystem::path(base.string() + ".bin")), 16u * sizeof(double));
  Parameter wrong{"w", Tensor({4, 3})}, b3{"b", Tensor({4})};
  EXPECT_THROW(load_checkpoint(base, {&wrong, &b3}), Error);
}

TEST(GradCheck, FlagsAWrongGradient) {
  Rng rng(3);
  auto p = random_param("p", {4}, rng);
  // relu's subgradient at 0 is 0 while the central difference sees slope 0.5.
  for (double& v : p.value.values()) v = 0.0;
  EXPECT_GT(grad_check([&](Tape& t) { return sum(relu(t.parameter(p))); }, {&p}), 0.4);
}

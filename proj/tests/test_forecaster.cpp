#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ctsearch/forecaster.hpp"

using namespace ctsearch;

namespace {

ArchHyper make_ah(std::vector<Edge> edges, HyperVector hv) {
  ArchHyper ah;
  ah.hyper = hv;
  ah.arch.num_nodes = static_cast<std::size_t>(hv.C);
  ah.arch.edges = std::move(edges);
  return ah;
}

// Chain 0->1->2 with the given operator on the first edge and identities after.
ArchHyper single_op(OperatorKind k, int h = 4, int blocks = 1) {
  return make_ah({{0, 1, k}, {1, 2, OperatorKind::IDENTITY}}, {blocks, 3, h, 6, 0, 0});
}

ForecastShape small_shape(std::size_t n = 3, std::size_t p = 5, std::size_t q = 2) {
  return {n, 1, WindowConfig{p, q}};
}

ad::Tensor random_tensor(ad::Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> nd;
  ad::Tensor t(std::move(shape));
  for (double& v : t.values()) v = nd(rng);
  return t;
}

std::vector<double> ring(std::size_t n) {
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    a[i * n + (i + 1) % n] = 1.0;
    a[((i + 1) % n) * n + i] = 1.0;
  }
  return a;
}

ad::Tensor run_operator(const ForecastModel& m, const ad::Tensor& x) {
  ad::Tape tape(false);
  const auto trans = m.transitions(tape);
  return m.apply_operator(tape, m.blocks()[0][0], tape.constant_ref(x), trans).value();
}

}  // namespace

TEST(BuildModel, TableExampleVector) {
  const auto ah = make_ah({{0, 1, OperatorKind::GDCC},
                           {1, 2, OperatorKind::DGCN},
                           {2, 3, OperatorKind::IDENTITY},
                           {3, 4, OperatorKind::INF_T}},
                          {2, 5, 32, 64, 0, 0});
  const auto m = build_model(ah, small_shape(), 1, ring(3));
  EXPECT_EQ(m.blocks().size(), 2u);
  EXPECT_EQ(m.header().at("output_node"), "last");
  for (const auto* p : m.parameters()) {
    if (p->name == "head.w1") {
      EXPECT_EQ(p->value.shape(), (ad::Shape{32, 64}));
    }
    if (p->name == "input.w") {
      EXPECT_EQ(p->value.shape(), (ad::Shape{1, 32}));
    }
  }
}

TEST(BuildModel, ParameterCountGrowsWithWidth) {
  auto ah = sample_arch_hyper(std::uint64_t{5});
  ah.hyper.H = 32;
  const auto small = build_model(ah, small_shape(), 1).parameter_count();
  ah.hyper.H = 64;
  EXPECT_GT(build_model(ah, small_shape(), 1).parameter_count(), small);
}

TEST(BuildModel, SameSeedSameInit) {
  const auto ah = sample_arch_hyper(std::uint64_t{6});
  const auto a = build_model(ah, small_shape(), 3), b = build_model(ah, small_shape(), 3);
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
  const auto c = build_model(ah, small_shape(), 4);
  EXPECT_NE(c.parameters()[0]->value, pa[0]->value);
}

TEST(BuildModel, InitWithinFanInBound) {
  const auto m = build_model(sample_arch_hyper(std::uint64_t{7}), small_shape(), 1);
  for (const auto* p : m.parameters()) {
    const std::size_t fan_in = p->value.rank() == 2 ? p->value.dim(0) : 0;
    if (fan_in == 0) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double v : p->value.values()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(BuildModel, EvenNodeCountRejected) {
  auto ah = make_ah({{0, 1, OperatorKind::GDCC}, {1, 2, OperatorKind::IDENTITY}, {2, 3, OperatorKind::IDENTITY}},
                    {1, 4, 4, 4, 0, 0});
  EXPECT_THROW(build_model(ah, small_shape(), 1), Error);
}

TEST(Operators, ZeroGdccGivesZero) {
  auto m = build_model(single_op(OperatorKind::GDCC), small_shape(), 1);
  for (auto* p : m.blocks()[0][0].params) p->value.fill(0.0);
  const auto y = run_operator(m, random_tensor({2, 3, 5, 4}, 1));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Operators, DgcnIdentityAdjacencyIsNodeIndependent) {
  std::vector<double> eye(9, 0.0);
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  ModelOptions opts;
  opts.diffusion_steps = 0;
  const auto m = build_model(single_op(OperatorKind::DGCN), small_shape(), 2, eye, opts);
  const auto x = random_tensor({2, 3, 5, 4}, 2);
  const auto y = run_operator(m, x);
  const auto& w = m.blocks()[0][0].params[0]->value;  // [W0f; W0b], 8 x 4
  const auto& b = m.blocks()[0][0].params[1]->value;
  for (std::size_t r = 0; r < 2 * 3 * 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      double expect = b[c];
      for (std::size_t k = 0; k < 4; ++k) expect += x[r * 4 + k] * (w.at(k, c) + w.at(4 + k, c));
      EXPECT_NEAR(y[r * 4 + c], expect, 1e-12);
    }
}

TEST(Operators, InfSWithEqualKeysAveragesValues) {
  auto m = build_model(single_op(OperatorKind::INF_S), small_shape(), 3);
  auto& ps = m.blocks()[0][0].params;
  ps[1]->value.fill(0.0);  // all keys zero -> equal logits
  const auto x = random_tensor({1, 3, 5, 4}, 3);
  const auto y = run_operator(m, x);
  const auto& wv = ps[2]->value;
  const auto& wo = ps[3]->value;
  const auto& bo = ps[4]->value;
  for (std::size_t p = 0; p < 5; ++p) {
    std::vector<double> vmean(4, 0.0);
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t k = 0; k < 4; ++k) vmean[c] += x[(n * 5 + p) * 4 + k] * wv.at(k, c) / 3.0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t c = 0; c < 4; ++c) {
        double expect = bo[c];
        for (std::size_t k = 0; k < 4; ++k) expect += vmean[k] * wo.at(k, c);
        EXPECT_NEAR(y[(n * 5 + p) * 4 + c], expect, 1e-12);
      }
  }
}

TEST(Operators, TemporalOperatorsAreCausal) {
  for (auto kind : {OperatorKind::GDCC, OperatorKind::INF_T}) {
    const auto m = build_model(single_op(kind, 4, 2), small_shape(3, 8), 4);
    const auto x = random_tensor({1, 3, 8, 1}, 4);
    ad::Tape t1(false);
    const auto h1 = m.backbone(t1, t1.constant_ref(x)).value();
    for (std::size_t probe = 1; probe < 8; ++probe) {
      auto x2 = x;
      for (std::size_t n = 0; n < 3; ++n) x2[n * 8 + probe] += 1.0;
      ad::Tape t2(false);
      const auto h2 = m.backbone(t2, t2.constant_ref(x2)).value();
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t t = 0; t < probe; ++t)
          for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(h1[((n * 8) + t) * 4 + c], h2[((n * 8) + t) * 4 + c]);
      bool changed = false;
      for (std::size_t c = 0; c < 4; ++c) changed |= h1[probe * 4 + c] != h2[probe * 4 + c];
      EXPECT_TRUE(changed);
    }
  }
}

TEST(Operators, IdentityOnlyBlocksAreExact) {
  const auto ah = make_ah({{0, 1, OperatorKind::IDENTITY}, {1, 2, OperatorKind::IDENTITY}, {0, 2, OperatorKind::IDENTITY}},
                          {3, 3, 4, 4, 0, 0});
  const auto m = build_model(ah, small_shape(), 5);
  const auto x = random_tensor({2, 3, 5, 1}, 5);
  ad::Tape tape(false);
  const auto in = ad::add(ad::matmul(tape.constant_ref(x), tape.parameter(*m.parameters()[0])),
                          tape.parameter(*m.parameters()[1]))
                      .value();
  ad::Tape t2(false);
  const auto trans = m.transitions(t2);
  const auto block = m.block_forward(t2, 0, t2.constant_ref(in), trans, {}).value();
  // node 2 = id(node 1) + id(node 0) = 2 * in
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_EQ(block[i], 2.0 * in[i]);
  ad::Tape t3(false);
  const auto h = m.backbone(t3, t3.constant_ref(x)).value();
  // each block: h <- h + 2 * layer_norm(h), rows of width H = 4
  std::vector<double> ref(in.values().begin(), in.values().end());
  for (int b = 0; b < 3; ++b) {
    for (std::size_t r = 0; r < ref.size(); r += 4) {
      double mu = 0, var = 0;
      for (std::size_t c = 0; c < 4; ++c) mu += ref[r + c] / 4;
      for (std::size_t c = 0; c < 4; ++c) var += (ref[r + c] - mu) * (ref[r + c] - mu) / 4;
      for (std::size_t c = 0; c < 4; ++c) ref[r + c] += 2 * (ref[r + c] - mu) / std::sqrt(var + 1e-5);
    }
  }
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_NEAR(h[i], ref[i], 1e-12);
}

TEST(Operators, OddNodeSumOutput) {
  const auto ah = make_ah({{0, 1, OperatorKind::IDENTITY},
                           {1, 2, OperatorKind::IDENTITY},
                           {2, 3, OperatorKind::IDENTITY},
                           {3, 4, OperatorKind::IDENTITY}},
                          {1, 5, 4, 4, 1, 0});
  const auto m = build_model(ah, small_shape(), 6);
  const auto in = random_tensor({1, 3, 5, 4}, 6);
  ad::Tape t(false);
  const auto out = m.block_forward(t, 0, t.constant_ref(in), {}, {}).value();
  // odd nodes 1 and 3 each equal the input
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_EQ(out[i], 2.0 * in[i]);
}

TEST(Operators, GradientCheckEveryKind) {
  for (auto kind : kAllOperators) {
    for (bool adaptive : {false, true}) {
      if (adaptive && kind != OperatorKind::DGCN) continue;
      ModelOptions opts;
      opts.adjacency = adaptive ? AdjacencySource::Adaptive : AdjacencySource::Auto;
      opts.adaptive_dim = 3;
      auto ah = make_ah({{0, 1, kind}, {1, 2, OperatorKind::GDCC}, {0, 2, kind}}, {2, 3, 3, 4, 1, 0});
      auto m = build_model(ah, small_shape(3, 4, 2), 7, ring(3), opts);
      const auto x = random_tensor({2, 3, 4, 1}, 8);
      const auto proj = random_tensor({2, 3, 2}, 9);
      const double err = ad::grad_check(
          [&](ad::Tape& tape) {
            return ad::sum(ad::mul(m.forward(tape, tape.constant_ref(x)), tape.constant_ref(proj)));
          },
          m.parameters());
      EXPECT_LT(err, 1e-4) << operator_name(kind) << (adaptive ? " adaptive" : "");
    }
  }
}

TEST(Operators, DropoutOnlyInTraining) {
  auto ah = single_op(OperatorKind::GDCC);
  ah.hyper.delta = 1;
  const auto m = build_model(ah, small_shape(), 9);
  const auto x = random_tensor({2, 3, 5, 1}, 10);
  EXPECT_EQ(m.predict(x), m.predict(x));
  Rng r1(1), r2(2);
  ad::Tape t1, t2;
  const auto a = m.forward(t1, t1.constant_ref(x), {true, &r1}).value();
  const auto b = m.forward(t2, t2.constant_ref(x), {true, &r2}).value();
  EXPECT_NE(a, b);
  EXPECT_NE(a, m.predict(x));
}

TEST(Operators, MissingGraphSourceErrors) {
  ModelOptions opts;
  opts.adjacency = AdjacencySource::Predefined;
  EXPECT_THROW(build_model(single_op(OperatorKind::DGCN), small_shape(), 1, std::nullopt, opts), Error);
  EXPECT_TRUE(build_model(single_op(OperatorKind::DGCN), small_shape(), 1).uses_adaptive_graph());
  EXPECT_FALSE(build_model(single_op(OperatorKind::DGCN), small_shape(), 1, ring(3)).uses_adaptive_graph());
}

TEST(Metrics, PerfectPrediction) {
  const std::vector<double> t{1, 2, 3, 4, 5, 7};
  const auto m = evaluate_metrics(t, t, 2, 1, ForecastMode::Single);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.mape, 0.0);
  EXPECT_EQ(m.rrse, 0.0);
  EXPECT_NEAR(m.corr, 1.0, 1e-12);
}

TEST(Metrics, HandExample) {
  const auto m = evaluate_metrics({2, 2}, {1, 3}, 1, 2, ForecastMode::Multi);
  EXPECT_DOUBLE_EQ(m.mae, 1.0);
  EXPECT_DOUBLE_EQ(m.rmse, 1.0);
  EXPECT_NEAR(m.mape, (1.0 + 1.0 / 3.0) / 2.0, 1e-15);
}

TEST(Metrics, MapeSkipsZeros) {
  const auto m = evaluate_metrics({1, 5}, {0, 4}, 1, 2, ForecastMode::Multi);
  EXPECT_DOUBLE_EQ(m.mape, 0.25);
}

TEST(Metrics, MatchesStraightforwardFormulas) {
  Rng rng(11);
  std::normal_distribution<double> nd;
  const std::size_t samples = 7, series = 3, k = 2;
  std::vector<double> p(samples * series * k), t(p.size());
  for (auto& v : p) v = nd(rng);
  for (auto& v : t) v = nd(rng);
  const auto m = evaluate_metrics(p, t, series, k, ForecastMode::Single);
  double mae = 0, mse = 0, mape = 0, tm = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    mae += std::fabs(p[i] - t[i]);
    mse += std::pow(p[i] - t[i], 2);
    mape += std::fabs((p[i] - t[i]) / t[i]);
    tm += t[i];
  }
  const double n = static_cast<double>(p.size());
  tm /= n;
  double var = 0;
  for (double v : t) var += std::pow(v - tm, 2);
  double corr = 0;
  for (std::size_t c = 0; c < series; ++c) {
    std::vector<double> a, b;
    for (std::size_t s = 0; s < samples; ++s)
      for (std::size_t j = 0; j < k; ++j) {
        a.push_back(p[(s * series + c) * k + j]);
        b.push_back(t[(s * series + c) * k + j]);
      }
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    corr += sab / std::sqrt(saa) / std::sqrt(sbb);
  }
  EXPECT_NEAR(m.mae, mae / n, 1e-12);
  EXPECT_NEAR(m.rmse, std::sqrt(mse / n), 1e-12);
  EXPECT_NEAR(m.mape, mape / n, 1e-12);
  EXPECT_NEAR(m.rrse, std::sqrt(mse) / std::sqrt(var), 1e-12);
  EXPECT_NEAR(m.corr, corr / static_cast<double>(series), 1e-12);
}

TEST(Metrics, ConstantSeriesNamed) {
  try {
    evaluate_metrics({1, 2, 3, 4}, {1, 5, 1, 6}, 2, 1, ForecastMode::Single);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("series 0"), std::string::npos);
  }
  EXPECT_THROW(evaluate_metrics({1}, {1, 2}, 1, 1, ForecastMode::Multi), Error);
}

TEST(Train, ZeroEpochsIsFinite) {
  SyntheticConfig sc;
  sc.N = 4;
  sc.T = 300;
  const auto data = split_and_normalize(generate_synthetic(sc), {});
  auto m = build_model(single_op(OperatorKind::GDCC, 8), {4, 1, {12, 3}}, 1, data.adjacency);
  const auto before = m.parameters()[0]->value;
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto r = train_model(m, data, cfg);
  EXPECT_TRUE(std::isfinite(r.best_val_error));
  EXPECT_EQ(r.epochs_run, 0);
  EXPECT_EQ(m.parameters()[0]->value, before);
}

TEST(Train, ConstantSeriesLossVanishes) {
  CtsDataset ds;
  ds.N = 3;
  ds.T = 200;
  ds.F = 1;
  ds.values.assign(600, 5.0);
  const auto data = split_and_normalize(ds, {});
  auto m = build_model(single_op(OperatorKind::GDCC, 8), {3, 1, {6, 2}}, 2);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  const auto r = train_model(m, data, cfg);
  EXPECT_LT(r.train_loss.back(), 0.05);
  EXPECT_LT(r.best_val_error, 0.05);
}

TEST(Train, BeatsMeanPredictorAcrossSeeds) {
  SyntheticConfig sc;
  sc.N = 4;
  sc.T = 600;
  const auto data = split_and_normalize(generate_synthetic(sc), {});
  const WindowConfig wc{12, 3};
  const double baseline = mean_predictor_error(data, WindowSet(data.val, wc));
  const auto ah = make_ah({{0, 1, OperatorKind::GDCC}, {1, 2, OperatorKind::DGCN}}, {1, 3, 16, 32, 0, 0});
  std::vector<std::vector<double>> histories;
  for (std::uint64_t seed : {1u, 2u}) {
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 32;
    cfg.seed = seed;
    const auto r = train_candidate(ah, data, wc, cfg);
    EXPECT_LT(r.val_error, baseline) << "seed " << seed;
    histories.push_back({r.val_error});
  }
  EXPECT_NE(histories[0], histories[1]);
}

TEST(Train, DeterministicGivenSeed) {
  SyntheticConfig sc;
  sc.N = 3;
  sc.T = 200;
  const auto data = split_and_normalize(generate_synthetic(sc), {});
  auto ah = single_op(OperatorKind::INF_T, 8);
  ah.hyper.delta = 1;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 5;
  const auto a = train_candidate(ah, data, {6, 2}, cfg);
  const auto b = train_candidate(ah, data, {6, 2}, cfg);
  EXPECT_EQ(a.val_error, b.val_error);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "ctsearch/ahc.hpp"

using namespace ctsearch;

namespace {

ComparatorModel small_model(std::uint64_t seed = 1, std::size_t d = 16, std::size_t layers = 2) {
  return ComparatorModel({layers, d}, SpaceConfig{}, seed);
}

ArchHyper chain_candidate() {
  ArchHyper ah;
  ah.hyper = {2, 5, 32, 64, 0, 0};
  ah.arch.num_nodes = 5;
  ah.arch.edges = {{0, 1, OperatorKind::GDCC},
                   {1, 2, OperatorKind::DGCN},
                   {2, 3, OperatorKind::IDENTITY},
                   {3, 4, OperatorKind::INF_T}};
  return ah;
}

// Simple noiseless score: fewer GDCC/DGCN ops and larger H mean lower error.
double toy_error(const ArchHyper& ah) {
  double s = 0.0;
  for (const auto& e : ah.arch.edges) {
    if (e.op == OperatorKind::GDCC) s -= 1.0;
    if (e.op == OperatorKind::DGCN) s -= 0.7;
    if (e.op == OperatorKind::IDENTITY) s += 0.5;
  }
  s -= 0.02 * ah.hyper.H;
  s += 0.3 * ah.hyper.B;
  return s;
}

std::vector<ComparisonSample> all_pairs(const std::vector<ArchHyper>& cands, Provenance prov, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<ComparisonSample> out;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    for (std::size_t j = i + 1; j < cands.size(); ++j) {
      auto a = i, b = j;
      if (coin(rng)) std::swap(a, b);
      out.push_back({cands[a], cands[b], toy_error(cands[a]) <= toy_error(cands[b]) ? 1 : 0, prov});
    }
  }
  return out;
}

std::vector<ArchHyper> distinct_samples(std::size_t n, std::uint64_t seed) {
  std::vector<ArchHyper> out;
  std::set<std::string> seen;
  Rng rng(seed);
  while (out.size() < n) {
    auto ah = sample_arch_hyper(rng);
    if (seen.insert(candidate_key(ah)).second) out.push_back(ah);
  }
  return out;
}

void set_identity_mlp(ComparatorModel& m) {
  const std::size_t d = m.config().hidden;
  for (auto& l : m.gin) {
    l.w1.value.fill(0.0);
    l.w2.value.fill(0.0);
    for (std::size_t i = 0; i < d; ++i) {
      l.w1.value.at(i, i) = 1.0;
      l.w2.value.at(i, i) = 1.0;
    }
    l.b1.value.fill(0.0);
    l.b2.value.fill(0.0);
    l.eps.value.fill(0.0);
  }
}

}  // namespace

TEST(EncodeFeatures, OneHotSelectsEmbeddingRow) {
  auto m = small_model();
  const auto g = to_dual_graph(chain_candidate());
  const auto f = encode_features(g, m);
  ASSERT_EQ(f.dim(0), 14u);
  const auto k = operator_index(OperatorKind::GDCC);
  for (std::size_t c = 0; c < 16; ++c) EXPECT_DOUBLE_EQ(f.at(0, c), m.op_embed.value.at(k, c));
}

TEST(EncodeFeatures, MinimumHyperGivesZeroRow) {
  auto m = small_model();
  const auto f = encode_features(to_dual_graph(chain_candidate()), m);
  for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(f.at(4, c), 0.0);
}

TEST(EncodeFeatures, PaddingRowsAreZero) {
  auto m = small_model();
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto g = to_dual_graph(sample_arch_hyper(rng));
    const auto f = encode_features(g, m);
    ASSERT_EQ(f.dim(0), 14u);
    for (std::size_t r = g.num_real_nodes; r < 14; ++r)
      for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(f.at(r, c), 0.0);
  }
}

TEST(GinForward, IdentityReductionDoublesInput) {
  auto m = small_model(2, 16, 1);
  set_identity_mlp(m);
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);  // non-negative so ReLU is identity
  ad::Tensor f({14, 16});
  for (double& v : f.values()) v = u(rng);
  ad::Tensor eye({14, 14});
  for (std::size_t i = 0; i < 14; ++i) eye.at(i, i) = 1.0;
  const auto h = gin_forward(eye, f, m);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(h[i], 2.0 * f[i], 1e-12);
}

TEST(GinForward, ZeroInputZeroBiasGivesZero) {
  auto m = small_model(5, 16, 4);
  for (auto& l : m.gin) {
    l.b1.value.fill(0.0);
    l.b2.value.fill(0.0);
  }
  const auto a = adjacency_tensor(to_dual_graph(sample_arch_hyper(std::uint64_t{9})));
  const auto h = gin_forward(a, ad::Tensor({14, 16}), m);
  for (double v : h.values()) EXPECT_EQ(v, 0.0);
}

TEST(GinForward, PermutationEquivariance) {
  auto m = small_model(6, 16, 4);
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const auto g = to_dual_graph(sample_arch_hyper(rng));
    const auto a = adjacency_tensor(g);
    const auto f = encode_features(g, m);
    const std::size_t n = g.num_operators();
    std::vector<std::size_t> perm(14);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n), rng);
    ad::Tensor pa({14, 14}), pf({14, 16});
    for (std::size_t i = 0; i < 14; ++i) {
      for (std::size_t j = 0; j < 14; ++j) pa.at(i, j) = a.at(perm[i], perm[j]);
      for (std::size_t c = 0; c < 16; ++c) pf.at(i, c) = f.at(perm[i], c);
    }
    const auto h = gin_forward(a, f, m);
    const auto ph = gin_forward(pa, pf, m);
    for (std::size_t i = 0; i < 14; ++i)
      for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(ph.at(i, c), h.at(perm[i], c), 1e-9);
  }
}

TEST(GinForward, GradientCheck) {
  auto m = small_model(8, 6, 2);
  const auto g = to_dual_graph(sample_arch_hyper(std::uint64_t{11}));
  const auto a = adjacency_tensor(g);
  const auto f = encode_features(g, m);
  Rng rng(12);
  std::normal_distribution<double> nd;
  ad::Tensor proj({14, 6});
  for (double& v : proj.values()) v = nd(rng);
  std::vector<ad::Parameter*> params;
  for (auto& l : m.gin) params.insert(params.end(), {&l.w1, &l.b1, &l.w2, &l.b2, &l.eps});
  const double err = ad::grad_check(
      [&](ad::Tape& tape) {
        auto h = gin_forward(tape, tape.constant_ref(a), tape.constant_ref(f), m);
        return ad::sum(ad::mul(h, tape.constant_ref(proj)));
      },
      params);
  EXPECT_LT(err, 1e-4);
}

TEST(BatchedEmbedding, MatchesDenseHyperRow) {
  auto m = small_model(13, 16, 4);
  const auto cands = distinct_samples(12, 14);
  const auto graphs = encode_all(cands, m.space());
  const auto emb = embed_all(m, graphs, 5);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto g = to_dual_graph(cands[i]);
    const auto h = gin_forward(adjacency_tensor(g), encode_features(g, m), m);
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(emb.at(i, c), h.at(g.hyper_index(), c), 1e-9);
  }
}

TEST(BatchedEmbedding, ClassifierGradientCheck) {
  auto m = small_model(15, 5, 2);
  const auto cands = distinct_samples(4, 16);
  const auto graphs = encode_all(cands, m.space());
  std::vector<const EncodedGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  ad::Tensor labels({2, 1});
  labels[0] = 1.0;
  const double err = ad::grad_check(
      [&](ad::Tape& tape) {
        auto emb = embed_graphs(tape, m, ptrs);
        auto p = classify_pairs(tape, m, ad::gather_rows(emb, {0, 2}), ad::gather_rows(emb, {1, 3}));
        return ad::bce_loss(p, labels);
      },
      m.parameters());
  EXPECT_LT(err, 1e-4);
}

TEST(Compare, DeterministicOnSelf) {
  auto m = small_model();
  const auto a = sample_arch_hyper(std::uint64_t{21});
  const auto c1 = compare(m, a, a);
  const auto c2 = compare(m, a, a);
  EXPECT_EQ(c1.probability, c2.probability);
  EXPECT_EQ(c1.first_better, c2.first_better);
  EXPECT_GT(c1.probability, 0.0);
  EXPECT_LT(c1.probability, 1.0);
}

TEST(Compare, ZeroClassifierIsHalf) {
  auto m = small_model();
  m.cls_w.value.fill(0.0);
  m.cls_b.value.fill(0.0);
  const auto c = compare(m, sample_arch_hyper(std::uint64_t{1}), sample_arch_hyper(std::uint64_t{2}));
  EXPECT_EQ(c.probability, 0.5);
  EXPECT_TRUE(c.first_better);
}

TEST(Rank, SingleCandidate) {
  auto m = small_model();
  const std::vector<ArchHyper> one{chain_candidate()};
  const auto r = rank_candidates(m, one);
  EXPECT_EQ(r.order, std::vector<std::size_t>{0});
  EXPECT_EQ(r.comparator_calls, 0u);
}

TEST(Rank, ConstantComparatorKeepsIndexOrder) {
  const auto r = rank_by_comparisons(7, [](std::size_t, std::size_t) { return Comparison{0.5, true}; });
  // With p=0.5 always "first better", wins = n-1-i, which matches index order.
  std::vector<std::size_t> expect(7);
  std::iota(expect.begin(), expect.end(), std::size_t{0});
  EXPECT_EQ(r.order, expect);
  EXPECT_EQ(r.comparator_calls, 21u);

  auto m = small_model();
  m.cls_w.value.fill(0.0);
  m.cls_b.value.fill(0.0);
  const auto cands = distinct_samples(6, 5);
  const auto rm = rank_candidates(m, cands);
  std::vector<std::size_t> six(6);
  std::iota(six.begin(), six.end(), std::size_t{0});
  EXPECT_EQ(rm.order, six);
  EXPECT_EQ(rm.comparator_calls, 15u);
}

TEST(Rank, PerfectComparatorRecoversOracleOrder) {
  const auto cands = distinct_samples(10, 31);
  std::vector<double> err;
  for (const auto& c : cands) err.push_back(toy_error(c) + 1e-6 * static_cast<double>(err.size()));
  const auto r = rank_by_comparisons(cands.size(), [&](std::size_t i, std::size_t j) {
    return Comparison{err[i] <= err[j] ? 1.0 : 0.0, err[i] <= err[j]};
  });
  std::vector<std::size_t> expect(cands.size());
  std::iota(expect.begin(), expect.end(), std::size_t{0});
  std::sort(expect.begin(), expect.end(), [&](auto a, auto b) { return err[a] < err[b]; });
  EXPECT_EQ(r.order, expect);
}

TEST(Rank, StrictTotalOrdersAllPermutations) {
  std::vector<std::size_t> perm{0, 1, 2, 3};
  do {
    // perm[i] is the rank position of candidate i.
    const auto r = rank_by_comparisons(4, [&](std::size_t i, std::size_t j) {
      const bool better = perm[i] < perm[j];
      return Comparison{better ? 0.9 : 0.1, better};
    });
    for (std::size_t pos = 0; pos < 4; ++pos) EXPECT_EQ(perm[r.order[pos]], pos);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST(Rank, CallCount) {
  for (std::size_t n : {2u, 5u, 8u}) {
    std::size_t calls = 0;
    const auto r = rank_by_comparisons(n, [&](std::size_t, std::size_t) {
      ++calls;
      return Comparison{};
    });
    EXPECT_EQ(calls, n * (n - 1) / 2);
    EXPECT_EQ(r.comparator_calls, calls);
  }
}

TEST(Train, RejectsEmptySets) {
  auto m = small_model();
  const auto s = all_pairs(distinct_samples(3, 1), Provenance::Clean, 1);
  EXPECT_THROW(train_denoising(m, {}, s, {}), Error);
  EXPECT_THROW(train_denoising(m, s, {}, {}), Error);
}

TEST(Train, NoiselessOracleFitsAndGeneralizes) {
  const auto cands = distinct_samples(20, 41);
  const auto samples = all_pairs(cands, Provenance::Noisy, 2);
  auto m = ComparatorModel({4, 32}, SpaceConfig{}, 3);
  AhcTrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_epochs = 60;
  cfg.finetune_max_epochs = 60;
  cfg.patience = 60;
  cfg.seed = 4;
  const auto h = train_denoising(m, samples, samples, cfg);
  EXPECT_LE(h.train_loss.size(), 120u);
  ASSERT_FALSE(h.train_loss.empty());
  detail::PairPool pool;
  const auto pairs = pool.add(samples, m.space());
  EXPECT_LT(detail::mean_loss(m, pool, pairs), 0.1);

}

TEST(Train, GeneralizesToUnseenCandidates) {
  const auto cands = distinct_samples(60, 43);
  const auto samples = all_pairs(cands, Provenance::Noisy, 6);
  auto m = ComparatorModel({4, 32}, SpaceConfig{}, 7);
  AhcTrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_epochs = 40;
  cfg.patience = 8;
  cfg.finetune_max_epochs = 10;
  cfg.seed = 8;
  train_denoising(m, samples, samples, cfg);
  // Pairs with tied toy errors have no correct answer and are skipped.
  const auto held = distinct_samples(80, 42);
  const auto graphs = encode_all(held, m.space());
  const PairScorer scorer(m, graphs);
  std::size_t agree = 0, total = 0;
  for (std::size_t i = 0; i < held.size(); ++i) {
    for (std::size_t j = i + 1; j < held.size(); ++j) {
      const double ei = toy_error(held[i]), ej = toy_error(held[j]);
      if (std::abs(ei - ej) < 1e-9) continue;
      agree += scorer(i, j).first_better == (ei < ej);
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.9);
}

TEST(Train, HistoryBoundAndDeterminism) {
  const auto cands = distinct_samples(12, 51);
  const auto samples = all_pairs(cands, Provenance::Noisy, 5);
  AhcTrainConfig cfg;
  cfg.seed = 9;
  auto m1 = small_model(10);
  auto m2 = small_model(10);
  const auto h1 = train_denoising(m1, samples, samples, cfg);
  const auto h2 = train_denoising(m2, samples, samples, cfg);
  EXPECT_LE(h1.train_loss.size(), static_cast<std::size_t>(cfg.warmup_epochs + cfg.finetune_max_epochs));
  EXPECT_EQ(h1.train_loss, h2.train_loss);
  for (std::size_t k = 0; k < m1.parameters().size(); ++k)
    EXPECT_EQ(m1.parameters()[k]->value, m2.parameters()[k]->value);
}

TEST(Transfer, ZeroEpochsLeavesParametersUnchanged) {
  auto m = small_model(17);
  const auto samples = all_pairs(distinct_samples(5, 1), Provenance::Noisy, 1);
  const auto t = transfer_finetune(m, samples, samples, 0);
  for (std::size_t k = 0; k < m.parameters().size(); ++k)
    EXPECT_EQ(m.parameters()[k]->value, t.parameters()[k]->value);
}

TEST(Checkpoint, RoundTripPreservesDecisions) {
  auto m = small_model(23);
  const auto dir = std::filesystem::temp_directory_path() / "ctsearch_ahc_ckpt";
  std::filesystem::create_directories(dir);
  m.save(dir / "model");
  const auto loaded = ComparatorModel::load(dir / "model");
  const auto a = sample_arch_hyper(std::uint64_t{1}), b = sample_arch_hyper(std::uint64_t{2});
  EXPECT_EQ(compare(m, a, b).probability, compare(loaded, a, b).probability);
  const auto header = ad::read_checkpoint_header(dir / "model");
  EXPECT_EQ(header.at("D").get<int>(), 16);
  EXPECT_EQ(header.at("L").get<int>(), 2);
  EXPECT_EQ(header.at("r").get<int>(), 6);
  EXPECT_EQ(header.at("space_fingerprint").get<std::string>(), space_fingerprint(SpaceConfig{}));
  std::filesystem::remove_all(dir);
}

TEST(SampleBank, JsonLinesRoundTrip) {
  const auto samples = all_pairs(distinct_samples(4, 61), Provenance::Clean, 3);
  const auto path = std::filesystem::temp_directory_path() / "ctsearch_bank.jsonl";
  write_sample_bank(path, samples);
  const auto back = read_sample_bank(path);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(candidate_key(back[i].ah1), candidate_key(samples[i].ah1));
    EXPECT_EQ(back[i].label, samples[i].label);
    EXPECT_EQ(back[i].provenance, Provenance::Clean);
  }
  std::filesystem::remove(path);
}

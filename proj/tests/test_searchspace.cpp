#include <gtest/gtest.h>

#include <set>

#include "ctsearch/searchspace.hpp"

using namespace ctsearch;

namespace {

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

bool has_violation(const ValidationReport& r, const std::string& needle) {
  for (const auto& v : r.violations) {
    if (v.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST(OperatorKind, Categories) {
  EXPECT_EQ(category(OperatorKind::GDCC), OperatorCategory::Temporal);
  EXPECT_EQ(category(OperatorKind::INF_T), OperatorCategory::Temporal);
  EXPECT_EQ(category(OperatorKind::DGCN), OperatorCategory::Spatial);
  EXPECT_EQ(category(OperatorKind::INF_S), OperatorCategory::Spatial);
  EXPECT_EQ(category(OperatorKind::IDENTITY), OperatorCategory::Skip);
  EXPECT_EQ(kAllOperators.size(), 5u);
  for (auto k : kAllOperators) EXPECT_EQ(parse_operator(operator_name(k)), k);
  EXPECT_THROW(parse_operator("CONV"), Error);
}

TEST(Validate, ChainIsValid) { EXPECT_TRUE(validate(chain_candidate()).ok()); }

TEST(Validate, UnconnectedNodes) {
  ArchHyper ah = chain_candidate();
  ah.arch.edges = {{0, 1, OperatorKind::GDCC}};
  const auto r = validate(ah);
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(has_violation(r, "node 2 in-degree 0"));
  EXPECT_TRUE(has_violation(r, "node 4 in-degree 0"));
}

TEST(Validate, BackwardEdge) {
  ArchHyper ah = chain_candidate();
  ah.arch.edges.push_back({1, 0, OperatorKind::GDCC});
  EXPECT_TRUE(has_violation(validate(ah), "backward edge"));
}

TEST(Validate, DuplicateEdgeAndHyperDomain) {
  ArchHyper ah = chain_candidate();
  ah.arch.edges.push_back({0, 1, OperatorKind::DGCN});
  ah.hyper.H = 40;
  const auto r = validate(ah);
  EXPECT_TRUE(has_violation(r, "duplicate edge"));
  EXPECT_TRUE(has_violation(r, "H=40 off-domain"));
}

TEST(Validate, CMismatch) {
  ArchHyper ah = chain_candidate();
  ah.hyper.C = 7;
  EXPECT_TRUE(has_violation(validate(ah), "C mismatch"));
}

TEST(Validate, InDegreeAboveTwo) {
  ArchHyper ah = chain_candidate();
  ah.arch.edges.push_back({0, 3, OperatorKind::GDCC});
  ah.arch.edges.push_back({1, 3, OperatorKind::GDCC});
  ah.arch.canonicalize();
  EXPECT_TRUE(has_violation(validate(ah), "node 3 in-degree 3"));
}

TEST(Sampler, Deterministic) {
  EXPECT_EQ(sample_arch_hyper(std::uint64_t{42}), sample_arch_hyper(std::uint64_t{42}));
  EXPECT_NE(sample_arch_hyper(std::uint64_t{42}), sample_arch_hyper(std::uint64_t{43}));
}

TEST(Sampler, ClosedOverValidSetAndUniformB) {
  Rng rng(7);
  int b2 = 0;
  constexpr int kTrials = 10000;
  for (int i = 0; i < kTrials; ++i) {
    const auto ah = sample_arch_hyper(rng);
    const auto r = validate(ah);
    ASSERT_TRUE(r.ok()) << describe(ah) << ": " << r.violations.front();
    EXPECT_LE(ah.arch.edges.size() + 1, 13u);
    b2 += ah.hyper.B == 2;
  }
  EXPECT_NEAR(static_cast<double>(b2) / kTrials, 1.0 / 3.0, 0.02);
}

TEST(Mutate, ValidExactlyOneEditAndDeterministic) {
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    const auto parent = sample_arch_hyper(rng);
    const auto m = mutate_detailed(parent, rng);
    ASSERT_TRUE(validate(m.child).ok()) << describe(m.child);
    ASSERT_NE(m.child, parent);
    const auto& pe = parent.arch.edges;
    const auto& ce = m.child.arch.edges;
    switch (m.kind) {
      case MutationKind::ReplaceOperator: {
        ASSERT_EQ(pe.size(), ce.size());
        int diffs = 0;
        for (std::size_t k = 0; k < pe.size(); ++k) {
          EXPECT_EQ(pe[k].src, ce[k].src);
          EXPECT_EQ(pe[k].dst, ce[k].dst);
          diffs += pe[k].op != ce[k].op;
        }
        EXPECT_EQ(diffs, 1);
        EXPECT_EQ(parent.hyper, m.child.hyper);
        break;
      }
      case MutationKind::RewireEdge: {
        ASSERT_EQ(pe.size(), ce.size());
        std::multiset<std::pair<int, int>> a, b;
        for (const auto& e : pe) a.insert({e.src, e.dst});
        for (const auto& e : ce) b.insert({e.src, e.dst});
        std::vector<std::pair<int, int>> only_a;
        std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(only_a));
        EXPECT_EQ(only_a.size(), 1u);
        EXPECT_EQ(parent.hyper, m.child.hyper);
        break;
      }
      case MutationKind::ChangeHyper: {
        const auto ph = parent.hyper.as_array(), ch = m.child.hyper.as_array();
        int diffs = 0;
        for (std::size_t f = 0; f < kHyperDims; ++f) diffs += ph[f] != ch[f];
        EXPECT_EQ(diffs, 1);
        if (m.field != HyperField::C) {
          EXPECT_EQ(parent.arch, m.child.arch);
        }
        break;
      }
    }
  }
  const auto base = sample_arch_hyper(std::uint64_t{5});
  EXPECT_EQ(mutate(base, std::uint64_t{9}), mutate(base, std::uint64_t{9}));
}

TEST(Crossover, ContractAndClosure) {
  const auto a = sample_arch_hyper(std::uint64_t{1});
  EXPECT_EQ(crossover(a, a, std::uint64_t{3}), a);
  Rng rng(13);
  for (int i = 0; i < 10000; ++i) {
    const auto p = sample_arch_hyper(rng);
    const auto q = sample_arch_hyper(rng);
    const auto child = crossover(p, q, rng);
    ASSERT_TRUE(validate(child).ok());
    const bool from_p = child.arch == p.arch;
    ASSERT_TRUE(from_p || child.arch == q.arch);
    auto expected = (from_p ? q : p).hyper;
    expected.C = child.arch.num_nodes;
    EXPECT_EQ(child.hyper, expected);
  }
}

TEST(SpatialTemporal, Predicate) {
  ArchHyper ah = chain_candidate();
  EXPECT_TRUE(contains_spatial_and_temporal(ah));
  for (auto& e : ah.arch.edges) e.op = OperatorKind::IDENTITY;
  EXPECT_FALSE(contains_spatial_and_temporal(ah));
  ah.arch.edges[0].op = OperatorKind::GDCC;
  ah.arch.edges[1].op = OperatorKind::INF_T;
  EXPECT_FALSE(contains_spatial_and_temporal(ah));
}

TEST(DualGraph, SingleEdge) {
  ArchHyper toy;
  toy.arch.num_nodes = 2;
  toy.arch.edges = {{0, 1, OperatorKind::GDCC}};
  const auto g = to_dual_graph(toy);
  EXPECT_EQ(g.num_real_nodes, 2u);
  std::set<std::pair<std::size_t, std::size_t>> nonzero;
  for (std::size_t i = 0; i < 14; ++i)
    for (std::size_t j = 0; j < 14; ++j)
      if (g.adjacency[i][j]) nonzero.insert({i, j});
  EXPECT_EQ(nonzero, (std::set<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}, {0, 1}, {1, 0}}));
  EXPECT_EQ(g.op_onehots[0][operator_index(OperatorKind::GDCC)], 1);
}

TEST(DualGraph, FlowDirection) {
  const auto g = to_dual_graph(chain_candidate());
  EXPECT_EQ(g.adjacency[0][1], 1);
  EXPECT_EQ(g.adjacency[1][0], 0);
  EXPECT_EQ(g.adjacency[0][2], 0);
}

TEST(DualGraph, StructuralInvariantsOverSamples) {
  Rng rng(17);
  for (int s = 0; s < 2000; ++s) {
    const auto ah = sample_arch_hyper(rng);
    const auto g = to_dual_graph(ah);
    const std::size_t n = g.num_operators();
    ASSERT_EQ(g.num_real_nodes, n + 1);
    for (std::size_t i = 0; i < 14; ++i) {
      EXPECT_EQ(g.adjacency[i][i], i <= n ? 1 : 0);
      for (std::size_t j = 0; j < 14; ++j) {
        if (i > n || j > n) {
          EXPECT_EQ(g.adjacency[i][j], 0);
        }
      }
    }
    for (std::size_t u = 0; u < n; ++u) {
      EXPECT_EQ(g.adjacency[u][n], 1);
      EXPECT_EQ(g.adjacency[n][u], 1);
      int row_sum = 0;
      for (auto bit : g.op_onehots[u]) row_sum += bit;
      EXPECT_EQ(row_sum, 1);
    }
  }
}

TEST(DualGraph, InjectiveOnSamples) {
  Rng rng(19);
  std::set<std::string> candidates;
  std::set<std::string> encodings;
  while (candidates.size() < 1000) {
    const auto ah = sample_arch_hyper(rng);
    if (!candidates.insert(candidate_key(ah)).second) continue;
    const auto g = to_dual_graph(ah);
    std::string enc;
    for (const auto& row : g.adjacency) enc.append(row.begin(), row.end());
    for (const auto& row : g.op_onehots) enc.append(row.begin(), row.end());
    for (int v : g.hyper_raw.as_array()) enc += std::to_string(v) + ",";
    encodings.insert(enc);
  }
  EXPECT_EQ(encodings.size(), candidates.size());
}

TEST(DualGraph, RejectsOversizedCandidate) {
  ArchHyper big;
  big.arch.num_nodes = 9;
  for (int j = 1; j < 9; ++j) {
    big.arch.edges.push_back({0, j, OperatorKind::GDCC});
    if (j >= 2) big.arch.edges.push_back({j - 1, j, OperatorKind::GDCC});
  }
  EXPECT_THROW(to_dual_graph(big), Error);
}

TEST(NormalizeHyper, Examples) {
  const SpaceConfig space;
  const auto n = normalize_hyper({4, 5, 32, 64, 0, 0}, space);
  EXPECT_DOUBLE_EQ(n[0], 0.5);
  EXPECT_DOUBLE_EQ(n[2], 0.0);
  for (double v : normalize_hyper({2, 5, 32, 64, 0, 0}, space)) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : normalize_hyper({6, 7, 64, 256, 1, 1}, space)) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_THROW(normalize_hyper({3, 5, 32, 64, 0, 0}, space), Error);
}

TEST(NormalizeHyper, MonotoneAndDegenerateDomain) {
  SpaceConfig space;
  for (std::size_t f = 0; f < kHyperDims; ++f) {
    auto dom = space.domains[f];
    std::sort(dom.begin(), dom.end());
    double prev = -1.0;
    for (int v : dom) {
      HyperVector h{2, 5, 32, 64, 0, 0};
      h.set(static_cast<HyperField>(f), v);
      const double x = normalize_hyper(h, space)[f];
      EXPECT_GT(x, prev);
      prev = x;
    }
  }
  space.domains[static_cast<std::size_t>(HyperField::H)] = {48};
  EXPECT_DOUBLE_EQ(normalize_hyper({2, 5, 48, 64, 0, 0}, space)[2], 0.0);
}

TEST(Serialization, RoundTripOverSamples) {
  Rng rng(23);
  for (int i = 0; i < 500; ++i) {
    const auto ah = sample_arch_hyper(rng);
    const auto j = to_json(ah);
    EXPECT_EQ(arch_hyper_from_json(Json::parse(j.dump())), ah);
  }
  const auto j = to_json(chain_candidate());
  EXPECT_EQ(j["arch"]["edges"][0], Json::array({0, 1, "GDCC"}));
  EXPECT_EQ(j["hyper"]["delta"], 0);
}

TEST(Enumerate, CountsRestrictedSpace) {
  SpaceConfig space;
  space.operators = {OperatorKind::GDCC, OperatorKind::DGCN};
  space.domains = {{{2}, {5}, {32}, {64}, {0}, {0}}};
  space.in_degrees = {1};
  const auto all = enumerate_space(space);
  EXPECT_EQ(all.size(), 24u * 16u);  // 1*2*3*4 predecessor choices, 2^4 operator assignments
  std::set<std::string> keys;
  for (const auto& ah : all) {
    EXPECT_TRUE(validate(ah, space).ok());
    keys.insert(candidate_key(ah));
  }
  EXPECT_EQ(keys.size(), all.size());
}

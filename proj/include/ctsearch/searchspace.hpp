#pragma once

// Joint architecture-hyperparameter search space: candidate types, validation,
// sampling, evolutionary edits and the dual arch-hyper graph encoding.

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctsearch/common.hpp"

namespace ctsearch {

using Json = nlohmann::json;

enum class OperatorKind : std::uint8_t { GDCC = 0, INF_T, DGCN, INF_S, IDENTITY };
enum class OperatorCategory : std::uint8_t { Temporal, Spatial, Skip };

inline constexpr std::size_t kNumOperatorKinds = 5;
inline constexpr std::array<OperatorKind, kNumOperatorKinds> kAllOperators = {
    OperatorKind::GDCC, OperatorKind::INF_T, OperatorKind::DGCN, OperatorKind::INF_S,
    OperatorKind::IDENTITY};

constexpr OperatorCategory category(OperatorKind k) {
  switch (k) {
    case OperatorKind::GDCC:
    case OperatorKind::INF_T:
      return OperatorCategory::Temporal;
    case OperatorKind::DGCN:
    case OperatorKind::INF_S:
      return OperatorCategory::Spatial;
    case OperatorKind::IDENTITY:
      break;
  }
  return OperatorCategory::Skip;
}

constexpr std::string_view operator_name(OperatorKind k) {
  switch (k) {
    case OperatorKind::GDCC: return "GDCC";
    case OperatorKind::INF_T: return "INF_T";
    case OperatorKind::DGCN: return "DGCN";
    case OperatorKind::INF_S: return "INF_S";
    case OperatorKind::IDENTITY: return "IDENTITY";
  }
  return "?";
}

inline OperatorKind parse_operator(std::string_view name) {
  for (auto k : kAllOperators) {
    if (operator_name(k) == name) return k;
  }
  throw Error("unknown operator kind '" + std::string(name) + "'");
}

constexpr std::size_t operator_index(OperatorKind k) { return static_cast<std::size_t>(k); }

struct Edge {
  int src = 0;
  int dst = 0;
  OperatorKind op = OperatorKind::IDENTITY;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// An ST-block DAG: nodes h_0..h_{C-1} are latent representations, edges carry operators.
struct ArchDag {
  int num_nodes = 0;
  std::vector<Edge> edges;  // kept sorted by (src, dst)

  void canonicalize() { std::sort(edges.begin(), edges.end()); }
  friend bool operator==(const ArchDag&, const ArchDag&) = default;
};

enum class HyperField : std::size_t { B = 0, C, H, I, U, Delta };
inline constexpr std::size_t kHyperDims = 6;
inline constexpr std::array<std::string_view, kHyperDims> kHyperFieldNames = {"B", "C", "H",
                                                                            "I", "U", "delta"};

struct HyperVector {
  int B = 2;      // ST-block count
  int C = 5;      // nodes per block
  int H = 32;     // hidden width
  int I = 64;     // output head width
  int U = 0;      // 0: last node output, 1: odd-node sum
  int delta = 0;  // dropout on/off

  std::array<int, kHyperDims> as_array() const { return {B, C, H, I, U, delta}; }
  static HyperVector from_array(const std::array<int, kHyperDims>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }
  int get(HyperField f) const { return as_array()[static_cast<std::size_t>(f)]; }
  void set(HyperField f, int value) {
    auto a = as_array();
    a[static_cast<std::size_t>(f)] = value;
    *this = from_array(a);
  }
  friend bool operator==(const HyperVector&, const HyperVector&) = default;
};

struct ArchHyper {
  ArchDag arch;
  HyperVector hyper;
  friend bool operator==(const ArchHyper&, const ArchHyper&) = default;
};

/// Operator set, hyperparameter domains and allowed per-node in-degrees.
struct SpaceConfig {
  std::vector<OperatorKind> operators{kAllOperators.begin(), kAllOperators.end()};
  std::array<std::vector<int>, kHyperDims> domains{{{2, 4, 6},
                                                     {5, 7},
                                                     {32, 48, 64},
                                                     {64, 128, 256},
                                                     {0, 1},
                                                     {0, 1}}};
  std::vector<int> in_degrees{1, 2};

  const std::vector<int>& domain(HyperField f) const {
    return domains[static_cast<std::size_t>(f)];
  }
  bool allows(OperatorKind k) const {
    return std::find(operators.begin(), operators.end(), k) != operators.end();
  }
  bool in_domain(HyperField f, int v) const {
    const auto& d = domain(f);
    return std::find(d.begin(), d.end(), v) != d.end();
  }
  int max_nodes() const {
    const auto& d = domain(HyperField::C);
    return d.empty() ? 0 : *std::max_element(d.begin(), d.end());
  }
};

inline Json to_json(const SpaceConfig& s) {
  Json ops = Json::array();
  for (auto k : s.operators) ops.push_back(std::string(operator_name(k)));
  Json domains = Json::object();
  for (std::size_t i = 0; i < kHyperDims; ++i) domains[std::string(kHyperFieldNames[i])] = s.domains[i];
  return Json{{"operators", ops}, {"domains", domains}, {"in_degrees", s.in_degrees}};
}

inline SpaceConfig space_from_json(const Json& j) {
  SpaceConfig s;
  if (j.contains("operators")) {
    s.operators.clear();
    for (const auto& name : j.at("operators")) s.operators.push_back(parse_operator(name.get<std::string>()));
  }
  if (j.contains("domains")) {
    for (std::size_t i = 0; i < kHyperDims; ++i) {
      const std::string key(kHyperFieldNames[i]);
      if (j.at("domains").contains(key)) s.domains[i] = j.at("domains").at(key).get<std::vector<int>>();
    }
  }
  if (j.contains("in_degrees")) s.in_degrees = j.at("in_degrees").get<std::vector<int>>();
  return s;
}

inline std::string space_fingerprint(const SpaceConfig& s) { return hex64(fnv1a(to_json(s).dump())); }

// --- serialization ---------------------------------------------------------

inline Json to_json(const ArchHyper& ah) {
  ArchDag dag = ah.arch;
  dag.canonicalize();
  Json edges = Json::array();
  for (const auto& e : dag.edges) edges.push_back(Json::array({e.src, e.dst, std::string(operator_name(e.op))}));
  Json hyper = Json::object();
  const auto h = ah.hyper.as_array();
  for (std::size_t i = 0; i < kHyperDims; ++i) hyper[std::string(kHyperFieldNames[i])] = h[i];
  return Json{{"arch", Json{{"C", dag.num_nodes}, {"edges", edges}}}, {"hyper", hyper}};
}

inline ArchHyper arch_hyper_from_json(const Json& j) {
  ArchHyper ah;
  const auto& arch = j.at("arch");
  ah.arch.num_nodes = arch.at("C").get<int>();
  for (const auto& e : arch.at("edges")) {
    if (!e.is_array() || e.size() != 3) throw Error("edge must be [src, dst, \"OP\"]: " + e.dump());
    ah.arch.edges.push_back({e[0].get<int>(), e[1].get<int>(), parse_operator(e[2].get<std::string>())});
  }
  ah.arch.canonicalize();
  std::array<int, kHyperDims> h{};
  for (std::size_t i = 0; i < kHyperDims; ++i) h[i] = j.at("hyper").at(std::string(kHyperFieldNames[i])).get<int>();
  ah.hyper = HyperVector::from_array(h);
  return ah;
}

/// Compact canonical text key, used for deduplication and seeding.
inline std::string candidate_key(const ArchHyper& ah) { return to_json(ah).dump(); }

inline std::string describe(const ArchHyper& ah) {
  std::ostringstream os;
  const auto h = ah.hyper.as_array();
  os << "[";
  for (std::size_t i = 0; i < kHyperDims; ++i) os << (i ? "," : "") << h[i];
  os << "] ";
  ArchDag dag = ah.arch;
  dag.canonicalize();
  for (std::size_t i = 0; i < dag.edges.size(); ++i) {
    const auto& e = dag.edges[i];
    os << (i ? " " : "") << e.src << "->" << e.dst << ":" << operator_name(e.op);
  }
  return os.str();
}

// --- validation ------------------------------------------------------------

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

inline ValidationReport validate(const ArchHyper& ah, const SpaceConfig& space = {}) {
  ValidationReport r;
  auto fail = [&](std::string msg) { r.violations.push_back(std::move(msg)); };
  const auto h = ah.hyper.as_array();
  for (std::size_t i = 0; i < kHyperDims; ++i) {
    if (!space.in_domain(static_cast<HyperField>(i), h[i])) {
      fail("hyper " + std::string(kHyperFieldNames[i]) + "=" + std::to_string(h[i]) + " off-domain");
    }
  }
  const int c = ah.arch.num_nodes;
  if (c != ah.hyper.C) {
    fail("C mismatch: arch has " + std::to_string(c) + " nodes, hyper C=" + std::to_string(ah.hyper.C));
  }
  if (c < 2) {
    fail("arch needs at least 2 nodes, got " + std::to_string(c));
    return r;
  }
  std::vector<int> in_degree(static_cast<std::size_t>(c), 0);
  std::vector<std::pair<int, int>> seen;
  for (const auto& e : ah.arch.edges) {
    if (e.src < 0 || e.dst < 0 || e.src >= c || e.dst >= c) {
      fail("edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) + " out of range");
      continue;
    }
    if (e.src >= e.dst) {
      fail("backward edge " + std::to_string(e.src) + "->" + std::to_string(e.dst));
    }
    if (std::find(seen.begin(), seen.end(), std::pair{e.src, e.dst}) != seen.end()) {
      fail("duplicate edge " + std::to_string(e.src) + "->" + std::to_string(e.dst));
    }
    seen.emplace_back(e.src, e.dst);
    if (!space.allows(e.op)) fail("operator " + std::string(operator_name(e.op)) + " not in space");
    ++in_degree[static_cast<std::size_t>(e.dst)];
  }
  if (in_degree[0] != 0) fail("node 0 in-degree " + std::to_string(in_degree[0]));
  for (int j = 1; j < c; ++j) {
    const int d = in_degree[static_cast<std::size_t>(j)];
    if (std::find(space.in_degrees.begin(), space.in_degrees.end(), d) == space.in_degrees.end()) {
      fail("node " + std::to_string(j) + " in-degree " + std::to_string(d));
    }
  }
  if (ah.arch.edges.size() + 1 > 14) fail("too many operator nodes for 14x14 encoding");
  return r;
}

inline bool contains_spatial_and_temporal(const ArchHyper& ah) {
  bool spatial = false, temporal = false;
  for (const auto& e : ah.arch.edges) {
    spatial |= category(e.op) == OperatorCategory::Spatial;
    temporal |= category(e.op) == OperatorCategory::Temporal;
  }
  return spatial && temporal;
}

// --- sampling and edits ----------------------------------------------------

namespace detail {

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  if (v.empty()) throw Error("cannot sample from an empty choice set");
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

inline std::vector<int> degree_choices(const SpaceConfig& space, int node) {
  std::vector<int> out;
  for (int d : space.in_degrees) {
    if (d >= 1 && d <= node) out.push_back(d);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw Error("no legal in-degree for node " + std::to_string(node));
  return out;
}

inline ArchDag sample_dag(int num_nodes, const SpaceConfig& space, Rng& rng) {
  ArchDag dag;
  dag.num_nodes = num_nodes;
  for (int j = 1; j < num_nodes; ++j) {
    const int degree = pick(degree_choices(space, j), rng);
    std::vector<int> preds(static_cast<std::size_t>(j));
    std::iota(preds.begin(), preds.end(), 0);
    for (int k = 0; k < degree; ++k) {
      std::uniform_int_distribution<int> d(k, j - 1);
      std::swap(preds[static_cast<std::size_t>(k)], preds[static_cast<std::size_t>(d(rng))]);
    }
    for (int k = 0; k < degree; ++k) {
      dag.edges.push_back({preds[static_cast<std::size_t>(k)], j, pick(space.operators, rng)});
    }
  }
  dag.canonicalize();
  return dag;
}

}  // namespace detail

inline ArchHyper sample_arch_hyper(Rng& rng, const SpaceConfig& space = {}) {
  ArchHyper ah;
  std::array<int, kHyperDims> h{};
  for (std::size_t i = 0; i < kHyperDims; ++i) h[i] = detail::pick(space.domains[i], rng);
  ah.hyper = HyperVector::from_array(h);
  ah.arch = detail::sample_dag(ah.hyper.C, space, rng);
  return ah;
}

inline ArchHyper sample_arch_hyper(std::uint64_t seed, const SpaceConfig& space = {}) {
  Rng rng(seed);
  return sample_arch_hyper(rng, space);
}

enum class MutationKind { ReplaceOperator, RewireEdge, ChangeHyper };

struct MutationResult {
  ArchHyper child;
  MutationKind kind;
  HyperField field = HyperField::B;  // meaningful for ChangeHyper
};

inline MutationResult mutate_detailed(const ArchHyper& ah, Rng& rng, const SpaceConfig& space = {}) {
  const auto& edges = ah.arch.edges;

  std::vector<std::size_t> rewirable;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const int dst = edges[i].dst;
    int preds = 0;
    for (const auto& e : edges) preds += e.dst == dst;
    if (preds < dst) rewirable.push_back(i);
  }
  std::vector<std::size_t> mutable_fields;
  for (std::size_t f = 0; f < kHyperDims; ++f) {
    if (space.domains[f].size() >= 2) mutable_fields.push_back(f);
  }

  std::vector<MutationKind> kinds;
  if (space.operators.size() >= 2 && !edges.empty()) kinds.push_back(MutationKind::ReplaceOperator);
  if (!rewirable.empty()) kinds.push_back(MutationKind::RewireEdge);
  if (!mutable_fields.empty()) kinds.push_back(MutationKind::ChangeHyper);
  if (kinds.empty()) throw Error("space admits no mutation");

  MutationResult out{ah, detail::pick(kinds, rng)};
  auto& child = out.child;
  switch (out.kind) {
    case MutationKind::ReplaceOperator: {
      std::uniform_int_distribution<std::size_t> d(0, edges.size() - 1);
      auto& e = child.arch.edges[d(rng)];
      std::vector<OperatorKind> others;
      for (auto k : space.operators) {
        if (k != e.op) others.push_back(k);
      }
      e.op = detail::pick(others, rng);
      break;
    }
    case MutationKind::RewireEdge: {
      auto& e = child.arch.edges[detail::pick(rewirable, rng)];
      std::vector<int> alternatives;
      for (int i = 0; i < e.dst; ++i) {
        bool taken = false;
        for (const auto& other : child.arch.edges) taken |= other.dst == e.dst && other.src == i;
        if (!taken) alternatives.push_back(i);
      }
      e.src = detail::pick(alternatives, rng);
      child.arch.canonicalize();
      break;
    }
    case MutationKind::ChangeHyper: {
      out.field = static_cast<HyperField>(detail::pick(mutable_fields, rng));
      std::vector<int> others;
      for (int v : space.domain(out.field)) {
        if (v != child.hyper.get(out.field)) others.push_back(v);
      }
      child.hyper.set(out.field, detail::pick(others, rng));
      if (out.field == HyperField::C) child.arch = detail::sample_dag(child.hyper.C, space, rng);
      break;
    }
  }
  return out;
}

inline ArchHyper mutate(const ArchHyper& ah, Rng& rng, const SpaceConfig& space = {}) {
  return mutate_detailed(ah, rng, space).child;
}

inline ArchHyper mutate(const ArchHyper& ah, std::uint64_t seed, const SpaceConfig& space = {}) {
  Rng rng(seed);
  return mutate(ah, rng, space);
}

/// Child takes the whole DAG of one parent and the hyper vector of the other,
/// with C forced to the DAG parent's node count.
inline ArchHyper crossover(const ArchHyper& a, const ArchHyper& b, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  const bool arch_from_a = coin(rng);
  const ArchHyper& arch_parent = arch_from_a ? a : b;
  const ArchHyper& hyper_parent = arch_from_a ? b : a;
  ArchHyper child{arch_parent.arch, hyper_parent.hyper};
  child.hyper.C = arch_parent.arch.num_nodes;
  return child;
}

inline ArchHyper crossover(const ArchHyper& a, const ArchHyper& b, std::uint64_t seed) {
  Rng rng(seed);
  return crossover(a, b, rng);
}

/// Every valid candidate of a (small) space, in a deterministic order.
inline std::vector<ArchHyper> enumerate_space(const SpaceConfig& space, std::size_t limit = 100000) {
  std::vector<ArchHyper> out;
  std::vector<std::array<int, kHyperDims>> hypers{{}};
  for (std::size_t f = 0; f < kHyperDims; ++f) {
    std::vector<std::array<int, kHyperDims>> next;
    for (const auto& partial : hypers) {
      for (int v : space.domains[f]) {
        auto h = partial;
        h[f] = v;
        next.push_back(h);
      }
    }
    hypers = std::move(next);
  }
  for (const auto& h : hypers) {
    const int c = h[static_cast<std::size_t>(HyperField::C)];
    // Enumerate predecessor sets node by node, then operator assignments.
    std::vector<std::vector<std::pair<int, int>>> structures{{}};
    for (int j = 1; j < c; ++j) {
      std::vector<std::vector<std::pair<int, int>>> next;
      for (const auto& partial : structures) {
        for (int d : detail::degree_choices(space, j)) {
          std::vector<bool> mask(static_cast<std::size_t>(j), false);
          std::fill(mask.begin(), mask.begin() + d, true);
          do {
            auto s = partial;
            for (int i = 0; i < j; ++i) {
              if (mask[static_cast<std::size_t>(i)]) s.emplace_back(i, j);
            }
            next.push_back(std::move(s));
          } while (std::prev_permutation(mask.begin(), mask.end()));
        }
      }
      structures = std::move(next);
    }
    for (const auto& s : structures) {
      std::vector<std::size_t> op_idx(s.size(), 0);
      while (true) {
        ArchHyper ah;
        ah.hyper = HyperVector::from_array(h);
        ah.arch.num_nodes = c;
        for (std::size_t e = 0; e < s.size(); ++e) {
          ah.arch.edges.push_back({s[e].first, s[e].second, space.operators[op_idx[e]]});
        }
        ah.arch.canonicalize();
        out.push_back(std::move(ah));
        if (out.size() > limit) throw Error("space has more than " + std::to_string(limit) + " candidates");
        std::size_t pos = 0;
        while (pos < op_idx.size() && ++op_idx[pos] == space.operators.size()) op_idx[pos++] = 0;
        if (pos == op_idx.size()) break;
      }
    }
  }
  return out;
}

// --- dual graph encoding ---------------------------------------------------

/// Dual arch-hyper graph: operator nodes (one per DAG edge) followed by the
/// Hyper node, zero padded to a fixed 14x14 adjacency.
struct ArchHyperGraph {
  static constexpr std::size_t kPad = 14;
  using OneHot = std::array<std::uint8_t, kNumOperatorKinds>;

  std::array<std::array<std::uint8_t, kPad>, kPad> adjacency{};
  std::vector<OneHot> op_onehots;
  HyperVector hyper_raw;
  std::size_t num_real_nodes = 0;  // n + 1

  std::size_t num_operators() const { return op_onehots.size(); }
  std::size_t hyper_index() const { return op_onehots.size(); }

  friend bool operator==(const ArchHyperGraph&, const ArchHyperGraph&) = default;
};

inline ArchHyperGraph to_dual_graph(const ArchHyper& ah) {
  ArchDag dag = ah.arch;
  dag.canonicalize();
  const std::size_t n = dag.edges.size();
  if (n + 1 > ArchHyperGraph::kPad) {
    throw Error("arch-hyper with " + std::to_string(n) + " operators exceeds the 14-node encoding");
  }
  ArchHyperGraph g;
  g.num_real_nodes = n + 1;
  g.hyper_raw = ah.hyper;
  g.op_onehots.resize(n);
  for (std::size_t u = 0; u < n; ++u) {
    g.op_onehots[u].fill(0);
    g.op_onehots[u][operator_index(dag.edges[u].op)] = 1;
    for (std::size_t v = 0; v < n; ++v) {
      if (dag.edges[u].dst == dag.edges[v].src) g.adjacency[u][v] = 1;
    }
    g.adjacency[u][n] = 1;
    g.adjacency[n][u] = 1;
  }
  for (std::size_t i = 0; i <= n; ++i) g.adjacency[i][i] = 1;
  return g;
}

inline std::array<double, kHyperDims> normalize_hyper(const HyperVector& h, const SpaceConfig& space = {}) {
  std::array<double, kHyperDims> out{};
  const auto values = h.as_array();
  for (std::size_t f = 0; f < kHyperDims; ++f) {
    const auto& d = space.domains[f];
    if (!space.in_domain(static_cast<HyperField>(f), values[f])) {
      throw Error("hyper " + std::string(kHyperFieldNames[f]) + "=" + std::to_string(values[f]) +
                  " is outside its domain");
    }
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    out[f] = *hi == *lo ? 0.0 : static_cast<double>(values[f] - *lo) / static_cast<double>(*hi - *lo);
  }
  return out;
}

}  // namespace ctsearch

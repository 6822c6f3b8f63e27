#pragma once

// Candidate scoring (synthetic oracle and forecaster training), pair
// construction, and ranking-quality metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "ctsearch/forecaster.hpp"
#include "ctsearch/samples.hpp"
#include "ctsearch/searchspace.hpp"

namespace ctsearch {

/// Scores candidates by validation error (lower is better). Both channels are
/// deterministic functions of (candidate, evaluator seed), independent of call order.
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual ScoreRecord proxy(const ArchHyper& ah) const = 0;
  virtual ScoreRecord full(const ArchHyper& ah) const = 0;
  virtual Json describe() const = 0;

  ScoreRecord evaluate(const ArchHyper& ah, Channel c) const { return c == Channel::Proxy ? proxy(ah) : full(ah); }

  /// Both scores of one candidate; equal to {proxy(ah), full(ah)}.
  virtual std::pair<ScoreRecord, ScoreRecord> proxy_and_full(const ArchHyper& ah) const {
    return {proxy(ah), full(ah)};
  }
};

inline std::uint64_t candidate_seed(std::uint64_t seed, const ArchHyper& ah) {
  return derive_seed(seed, fnv1a(candidate_key(ah)));
}

// ---------------------------------------------------------------- synthetic oracle

struct SyntheticOracleConfig {
  std::array<double, kNumOperatorKinds> op_weights{0.30, 0.20, 0.25, 0.15, 0.05};
  double depth_weight = -0.20;
  std::array<double, kHyperDims> hyper_weights{-0.40, 0.30, -0.50, 0.20, 0.15, -0.10};
  double interaction = -0.08;
  double offset = 5.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  SpaceConfig space;
};

inline Json to_json(const SyntheticOracleConfig& c) {
  return Json{{"op_weights", c.op_weights},   {"depth_weight", c.depth_weight},
              {"hyper_weights", c.hyper_weights}, {"interaction", c.interaction},
              {"offset", c.offset},           {"noise_sigma", c.noise_sigma},
              {"seed", c.seed},               {"space", to_json(c.space)}};
}

inline SyntheticOracleConfig oracle_config_from_json(const Json& j) {
  SyntheticOracleConfig c;
  c.op_weights = j.at("op_weights").get<std::array<double, kNumOperatorKinds>>();
  c.depth_weight = j.at("depth_weight").get<double>();
  c.hyper_weights = j.at("hyper_weights").get<std::array<double, kHyperDims>>();
  c.interaction = j.at("interaction").get<double>();
  c.offset = j.value("offset", 5.0);
  c.noise_sigma = j.value("noise_sigma", 0.0);
  c.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("space")) c.space = space_from_json(j.at("space"));
  return c;
}

/// Oracle with weights drawn from N(0, 1/4) (operators, depth, hypers) and N(0, 1/100) (interaction).
inline SyntheticOracleConfig random_oracle(std::uint64_t seed, const SpaceConfig& space = {}) {
  Rng rng(derive_seed(seed, 0x0AC1E));
  std::normal_distribution<double> w(0.0, 0.5), inter(0.0, 0.1);
  SyntheticOracleConfig c;
  for (auto& v : c.op_weights) v = w(rng);
  c.depth_weight = w(rng);
  for (auto& v : c.hyper_weights) v = w(rng);
  c.interaction = inter(rng);
  c.seed = seed;
  c.space = space;
  return c;
}

/// Perturbs every weight by N(0, magnitude^2): a related but different target task.
inline SyntheticOracleConfig shifted_oracle(const SyntheticOracleConfig& base, double magnitude, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5A1F7));
  std::normal_distribution<double> d(0.0, magnitude);
  auto c = base;
  for (auto& v : c.op_weights) v += d(rng);
  c.depth_weight += d(rng);
  for (auto& v : c.hyper_weights) v += d(rng);
  c.interaction += d(rng) * 0.5;
  c.seed = seed;
  return c;
}

/// Number of edges on the longest h_0 -> h_{C-1} path.
inline int longest_path(const ArchDag& dag) {
  std::vector<int> depth(static_cast<std::size_t>(std::max(dag.num_nodes, 1)), -1);
  depth[0] = 0;
  auto edges = dag.edges;
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.dst < b.dst; });
  for (const auto& e : edges) {
    const auto s = static_cast<std::size_t>(e.src), d = static_cast<std::size_t>(e.dst);
    if (depth[s] >= 0) depth[d] = std::max(depth[d], depth[s] + 1);
  }
  return std::max(0, depth.back());
}

struct OracleFeatures {
  std::array<int, kNumOperatorKinds> op_counts{};
  double depth = 0.0;  // longest path / (C - 1)
  std::array<double, kHyperDims> hyper{};
  int temporal = 0, spatial = 0;
};

inline OracleFeatures oracle_features(const ArchHyper& ah, const SpaceConfig& space = {}) {
  OracleFeatures f;
  for (const auto& e : ah.arch.edges) {
    ++f.op_counts[operator_index(e.op)];
    const auto cat = category(e.op);
    if (cat == OperatorCategory::Temporal) ++f.temporal;
    if (cat == OperatorCategory::Spatial) ++f.spatial;
  }
  f.depth = static_cast<double>(longest_path(ah.arch)) / static_cast<double>(std::max(1, ah.arch.num_nodes - 1));
  f.hyper = normalize_hyper(ah.hyper, space);
  return f;
}

/// Noiseless score: offset + w·features + interaction·(temporal x spatial).
inline double oracle_true_score(const ArchHyper& ah, const SyntheticOracleConfig& c) {
  const auto f = oracle_features(ah, c.space);
  double s = c.offset + c.depth_weight * f.depth + c.interaction * f.temporal * f.spatial;
  for (std::size_t k = 0; k < kNumOperatorKinds; ++k) s += c.op_weights[k] * f.op_counts[k];
  for (std::size_t k = 0; k < kHyperDims; ++k) s += c.hyper_weights[k] * f.hyper[k];
  return s;
}

inline double synthetic_oracle(const ArchHyper& ah, const SyntheticOracleConfig& c, Channel channel) {
  double s = oracle_true_score(ah, c);
  if (channel == Channel::Proxy && c.noise_sigma > 0.0) {
    Rng rng(candidate_seed(derive_seed(c.seed, 0x401CE), ah));
    s += std::normal_distribution<double>(0.0, c.noise_sigma)(rng);
  }
  return s;
}

/// Population standard deviation of the noiseless scores of `cands`.
inline double oracle_score_std(const SyntheticOracleConfig& c, const std::vector<ArchHyper>& cands) {
  if (cands.empty()) return 0.0;
  double mean = 0.0, sq = 0.0;
  for (const auto& ah : cands) mean += oracle_true_score(ah, c);
  mean /= static_cast<double>(cands.size());
  for (const auto& ah : cands) sq += std::pow(oracle_true_score(ah, c) - mean, 2);
  return std::sqrt(sq / static_cast<double>(cands.size()));
}

class SyntheticEvaluator final : public Evaluator {
 public:
  explicit SyntheticEvaluator(SyntheticOracleConfig cfg, int proxy_epochs = 5, int full_epochs = 100)
      : cfg_(std::move(cfg)), proxy_epochs_(proxy_epochs), full_epochs_(full_epochs) {}

  ScoreRecord proxy(const ArchHyper& ah) const override { return make(ah, Channel::Proxy, proxy_epochs_); }
  ScoreRecord full(const ArchHyper& ah) const override { return make(ah, Channel::Full, full_epochs_); }
  Json describe() const override { return Json{{"kind", "synthetic-oracle"}, {"oracle", to_json(cfg_)}}; }

  const SyntheticOracleConfig& config() const { return cfg_; }

 private:
  ScoreRecord make(const ArchHyper& ah, Channel c, int epochs) const {
    return ScoreRecord{ah, synthetic_oracle(ah, cfg_, c), c, epochs, cfg_.seed, std::nullopt, std::nullopt};
  }

  SyntheticOracleConfig cfg_;
  int proxy_epochs_, full_epochs_;
};

// ---------------------------------------------------------------- forecaster evaluator

struct ForecastEvalConfig {
  WindowConfig window;
  TrainConfig train;  // train.epochs is the full budget; train.seed the base seed
  int proxy_epochs = 5;
  ModelOptions model;
};

inline Json to_json(const ForecastEvalConfig& c) {
  return Json{{"P", c.window.P},
              {"Q", c.window.Q},
              {"mode", c.window.mode == ForecastMode::Multi ? "multi" : "single"},
              {"single_target_offset", c.window.single_target_offset},
              {"full_epochs", c.train.epochs},
              {"proxy_epochs", c.proxy_epochs},
              {"batch_size", c.train.batch_size},
              {"lr", c.train.lr},
              {"weight_decay", c.train.weight_decay},
              {"patience", c.train.patience},
              {"max_train_windows", c.train.max_train_windows},
              {"eval_stride", c.train.eval_stride},
              {"seed", c.train.seed}};
}

/// Proxy = best validation error within the first k epochs; full = the same
/// run continued to the full budget, so a k-epoch proxy is a prefix of the full run.
class ForecastEvaluator final : public Evaluator {
 public:
  ForecastEvaluator(std::shared_ptr<const SplitData> data, ForecastEvalConfig cfg)
      : data_(std::move(data)), cfg_(std::move(cfg)) {
    if (!data_) throw Error("ForecastEvaluator needs a dataset");
  }

  ScoreRecord proxy(const ArchHyper& ah) const override {
    auto tc = cfg_.train;
    tc.epochs = cfg_.proxy_epochs;
    tc.seed = candidate_seed(cfg_.train.seed, ah);
    ForecastModel m(ah, shape(), tc.seed, data_->adjacency, cfg_.model);
    const auto r = train_model(m, *data_, tc);
    return ScoreRecord{ah, r.best_val_error, Channel::Proxy, cfg_.proxy_epochs, tc.seed, std::nullopt, std::nullopt};
  }

  ScoreRecord full(const ArchHyper& ah) const override {
    const auto r = full_result(ah);
    const double test = cfg_.window.mode == ForecastMode::Multi ? r.test_metrics.mae : r.test_metrics.rrse;
    return ScoreRecord{ah, r.val_error, Channel::Full, cfg_.train.epochs, r.seed, test, r.parameter_count};
  }

  CandidateResult full_result(const ArchHyper& ah) const {
    auto tc = cfg_.train;
    tc.seed = candidate_seed(cfg_.train.seed, ah);
    return train_candidate(ah, *data_, cfg_.window, tc, cfg_.model);
  }

  // One training run serves both channels, since the proxy run is a prefix of the full run.
  std::pair<ScoreRecord, ScoreRecord> proxy_and_full(const ArchHyper& ah) const override {
    if (cfg_.proxy_epochs <= 0 || cfg_.proxy_epochs > cfg_.train.epochs) return {proxy(ah), full(ah)};
    auto tc = cfg_.train;
    tc.seed = candidate_seed(cfg_.train.seed, ah);
    ForecastModel m(ah, shape(), tc.seed, data_->adjacency, cfg_.model);
    const auto r = train_model(m, *data_, tc);
    const auto k = static_cast<std::size_t>(std::min<int>(cfg_.proxy_epochs, r.epochs_run));
    const double proxy = *std::min_element(r.val_error.begin(), r.val_error.begin() + static_cast<std::ptrdiff_t>(k));
    const auto test = split_metrics(m, WindowSet(data_->test, cfg_.window), data_->scaler, tc.eval_stride);
    return {ScoreRecord{ah, proxy, Channel::Proxy, cfg_.proxy_epochs, tc.seed, std::nullopt, std::nullopt},
            ScoreRecord{ah, r.best_val_error, Channel::Full, cfg_.train.epochs, tc.seed,
                        cfg_.window.mode == ForecastMode::Multi ? test.mae : test.rrse, m.parameter_count()}};
  }

  Json describe() const override { return Json{{"kind", "forecaster"}, {"config", to_json(cfg_)}}; }

  const ForecastEvalConfig& config() const { return cfg_; }
  const SplitData& data() const { return *data_; }

 private:
  ForecastShape shape() const { return {data_->train.N, data_->train.F, cfg_.window}; }

  std::shared_ptr<const SplitData> data_;
  ForecastEvalConfig cfg_;
};

// ---------------------------------------------------------------- batch evaluation

/// Evaluates every candidate on `channel`, fanning out over `workers` threads.
/// Results are in input order and independent of the worker count.
inline std::vector<ScoreRecord> evaluate_all(const Evaluator& ev, const std::vector<ArchHyper>& cands,
                                             Channel channel, int workers = 1) {
  std::vector<ScoreRecord> out(cands.size());
  const auto w = static_cast<std::size_t>(std::clamp<int>(workers, 1, 64));
  if (w == 1 || cands.size() < 2) {
    for (std::size_t i = 0; i < cands.size(); ++i) out[i] = ev.evaluate(cands[i], channel);
    return out;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < cands.size(); i += w) out[i] = ev.evaluate(cands[i], channel);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------- pairs and metrics

/// One sample per unordered pair, stored in a seeded random direction; label 1
/// iff the first candidate's score is lower or equal.
inline std::vector<ComparisonSample> make_pairs(const std::vector<ScoreRecord>& records, std::uint64_t seed = 0) {
  if (records.size() < 2) throw Error("make_pairs needs at least 2 records, got " + std::to_string(records.size()));
  const Channel c = records.front().channel;
  for (const auto& r : records)
    if (r.channel != c) throw Error("make_pairs: records mix proxy and full channels");
  const Provenance prov = c == Channel::Proxy ? Provenance::Noisy : Provenance::Clean;
  Rng rng(derive_seed(seed, 0x9A125));
  std::vector<ComparisonSample> out;
  out.reserve(records.size() * (records.size() - 1) / 2);
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t j = i + 1; j < records.size(); ++j) {
      const bool swap = (rng() >> 63) != 0;
      const auto& a = swap ? records[j] : records[i];
      const auto& b = swap ? records[i] : records[j];
      out.push_back({a.ah, b.ah, a.score <= b.score ? 1 : 0, prov});
    }
  }
  return out;
}

/// Fraction of ordered pairs (n, m), n != m, on which (a_n >= a_m) agrees with (b_n >= b_m).
inline double pairwise_ranking_accuracy(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error("pairwise_ranking_accuracy: lengths differ (" + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()) + ")");
  }
  if (a.size() < 2) throw Error("pairwise_ranking_accuracy needs at least 2 scores");
  std::size_t agree = 0;
  for (std::size_t n = 0; n < a.size(); ++n)
    for (std::size_t m = 0; m < a.size(); ++m)
      if (n != m && (a[n] >= a[m]) == (b[n] >= b[m])) ++agree;
  return static_cast<double>(agree) / static_cast<double>(a.size() * (a.size() - 1));
}

/// 1-based ranks, ties receiving the average of the positions they span.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<double> r(x.size());
  for (std::size_t s = 0; s < idx.size();) {
    std::size_t e = s;
    while (e + 1 < idx.size() && x[idx[e + 1]] == x[idx[s]]) ++e;
    const double avg = 0.5 * static_cast<double>(s + e) + 1.0;
    for (std::size_t k = s; k <= e; ++k) r[idx[k]] = avg;
    s = e + 1;
  }
  return r;
}

/// Pearson correlation of average ranks. A constant argument has no ranking
/// information and yields 0.
inline double spearman_rho(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error("spearman_rho: lengths differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                ")");
  }
  if (a.size() < 2) throw Error("spearman_rho needs at least 2 values");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double mean = 0.5 * static_cast<double>(a.size() + 1);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - mean) * (rb[i] - mean);
    saa += (ra[i] - mean) * (ra[i] - mean);
    sbb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline std::vector<double> scores_of(const std::vector<ScoreRecord>& records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.score);
  return out;
}

}  // namespace ctsearch

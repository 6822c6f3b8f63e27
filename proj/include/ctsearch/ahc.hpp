#pragma once

// Architecture-hyperparameter comparator: a GIN encoder over dual arch-hyper
// graphs, read out at the Hyper node, followed by a pairwise logistic classifier.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctsearch/autodiff.hpp"
#include "ctsearch/samples.hpp"
#include "ctsearch/searchspace.hpp"

namespace ctsearch {

struct ComparatorConfig {
  std::size_t layers = 4;
  std::size_t hidden = 128;
};

class ComparatorModel {
 public:
  struct GinLayer {
    ad::Parameter w1, b1, w2, b2, eps;
  };

  ComparatorModel(ComparatorConfig cfg = {}, SpaceConfig space = {}, std::uint64_t seed = 0)
      : cfg_(cfg), space_(std::move(space)) {
    if (cfg_.hidden == 0) throw Error("comparator hidden width must be positive");
    Rng rng(seed);
    const std::size_t d = cfg_.hidden;
    hyper_embed = ad::uniform_parameter("W_c", {kHyperDims, d}, kHyperDims, rng);
    op_embed = ad::uniform_parameter("W_e", {kNumOperatorKinds, d}, kNumOperatorKinds, rng);
    for (std::size_t k = 0; k < cfg_.layers; ++k) {
      const std::string p = "gin" + std::to_string(k) + ".";
      gin.push_back({ad::uniform_parameter(p + "w1", {d, d}, d, rng), ad::uniform_parameter(p + "b1", {d}, d, rng),
                     ad::uniform_parameter(p + "w2", {d, d}, d, rng), ad::uniform_parameter(p + "b2", {d}, d, rng),
                     ad::zero_parameter(p + "eps", {1})});
    }
    cls_w = ad::uniform_parameter("cls.w", {2 * d, 1}, 2 * d, rng);
    cls_b = ad::uniform_parameter("cls.b", {1}, 2 * d, rng);
  }

  const ComparatorConfig& config() const { return cfg_; }
  const SpaceConfig& space() const { return space_; }

  std::vector<ad::Parameter*> parameters() {
    std::vector<ad::Parameter*> out{&hyper_embed, &op_embed};
    for (auto& l : gin) out.insert(out.end(), {&l.w1, &l.b1, &l.w2, &l.b2, &l.eps});
    out.insert(out.end(), {&cls_w, &cls_b});
    return out;
  }
  std::vector<const ad::Parameter*> parameters() const {
    auto mut = const_cast<ComparatorModel*>(this)->parameters();
    return {mut.begin(), mut.end()};
  }

  Json header() const {
    return Json{{"L", cfg_.layers},
                {"D", cfg_.hidden},
                {"num_operator_kinds", kNumOperatorKinds},
                {"r", kHyperDims},
                {"space_fingerprint", space_fingerprint(space_)},
                {"space", to_json(space_)}};
  }

  void save(const std::filesystem::path& base) const { ad::save_checkpoint(base, parameters(), header()); }

  static ComparatorModel load(const std::filesystem::path& base) {
    const Json h = ad::read_checkpoint_header(base);
    if (h.at("num_operator_kinds").get<std::size_t>() != kNumOperatorKinds ||
        h.at("r").get<std::size_t>() != kHyperDims) {
      throw Error("checkpoint " + base.string() + " was written for a different encoding width");
    }
    ComparatorModel m({h.at("L").get<std::size_t>(), h.at("D").get<std::size_t>()}, space_from_json(h.at("space")));
    ad::load_checkpoint(base, m.parameters());
    return m;
  }

  ad::Parameter hyper_embed;  // W_c: r x D
  ad::Parameter op_embed;     // W_e: |O| x D
  std::vector<GinLayer> gin;
  ad::Parameter cls_w;  // 2D x 1
  ad::Parameter cls_b;  // 1

 private:
  ComparatorConfig cfg_;
  SpaceConfig space_;
};

// ---- dense single-graph path ----------------------------------------------

/// F_a (14 x D): operator rows H_e W_e, then the Hyper row norm(H_o) W_c, then zero padding.
inline ad::Tensor encode_features(const ArchHyperGraph& g, const ComparatorModel& m) {
  const std::size_t d = m.config().hidden, n = g.num_operators();
  ad::Tensor out({ArchHyperGraph::kPad, d});
  const auto& we = m.op_embed.value;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t k = 0; k < kNumOperatorKinds; ++k) {
      if (!g.op_onehots[u][k]) continue;
      for (std::size_t c = 0; c < d; ++c) out.at(u, c) += we.at(k, c);
    }
  }
  const auto h = normalize_hyper(g.hyper_raw, m.space());
  for (std::size_t f = 0; f < kHyperDims; ++f) {
    for (std::size_t c = 0; c < d; ++c) out.at(n, c) += h[f] * m.hyper_embed.value.at(f, c);
  }
  return out;
}

inline ad::Tensor adjacency_tensor(const ArchHyperGraph& g) {
  ad::Tensor a({ArchHyperGraph::kPad, ArchHyperGraph::kPad});
  for (std::size_t i = 0; i < ArchHyperGraph::kPad; ++i)
    for (std::size_t j = 0; j < ArchHyperGraph::kPad; ++j) a.at(i, j) = g.adjacency[i][j];
  return a;
}

inline ad::Var gin_layer(const ad::Var& h, const ad::Var& aggregated, const ComparatorModel::GinLayer& layer,
                         ad::Tape& tape) {
  auto z = ad::add(ad::add(h, ad::scale_by(h, tape.parameter(layer.eps))), aggregated);
  auto hidden = ad::relu(ad::add(ad::matmul(z, tape.parameter(layer.w1)), tape.parameter(layer.b1)));
  return ad::add(ad::matmul(hidden, tape.parameter(layer.w2)), tape.parameter(layer.b2));
}

/// H^(L) for a padded adjacency (14 x 14) and feature matrix (14 x D).
inline ad::Var gin_forward(ad::Tape& tape, const ad::Var& adjacency, const ad::Var& features,
                           const ComparatorModel& m) {
  ad::Var h = features;
  for (const auto& layer : m.gin) {
    const auto agg = ad::matmul(adjacency, h);
    h = gin_layer(h, agg, layer, tape);
  }
  return h;
}

inline ad::Tensor gin_forward(const ad::Tensor& adjacency, const ad::Tensor& features, const ComparatorModel& m) {
  ad::Tape tape(false);
  return gin_forward(tape, tape.constant_ref(adjacency), tape.constant_ref(features), m).value();
}

// ---- batched compact path (training and ranking) --------------------------

/// A dual graph reduced to what the GIN needs: operator ids, normalized hyper
/// vector and the nonzero adjacency links (dst, src) among real nodes.
struct EncodedGraph {
  std::vector<std::uint8_t> ops;
  std::array<double, kHyperDims> hyper{};
  std::vector<std::pair<std::uint8_t, std::uint8_t>> links;
};

inline EncodedGraph encode_graph(const ArchHyperGraph& g, const SpaceConfig& space) {
  EncodedGraph e;
  for (const auto& row : g.op_onehots) {
    e.ops.push_back(static_cast<std::uint8_t>(std::find(row.begin(), row.end(), 1) - row.begin()));
  }
  e.hyper = normalize_hyper(g.hyper_raw, space);
  for (std::size_t i = 0; i < g.num_real_nodes; ++i)
    for (std::size_t j = 0; j < g.num_real_nodes; ++j)
      if (g.adjacency[i][j]) e.links.emplace_back(static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(j));
  return e;
}

inline EncodedGraph encode_graph(const ArchHyper& ah, const SpaceConfig& space) {
  return encode_graph(to_dual_graph(ah), space);
}

/// Hyper-node readouts l_a (G x D) for a batch of graphs. Rows are stacked as
/// [operators of g0, operators of g1, ..., hyper g0, hyper g1, ...].
inline ad::Var embed_graphs(ad::Tape& tape, const ComparatorModel& m, std::span<const EncodedGraph* const> graphs) {
  std::size_t total_ops = 0;
  for (const auto* g : graphs) total_ops += g->ops.size();
  const std::size_t count = graphs.size();
  ad::Tensor onehots({total_ops, kNumOperatorKinds});
  ad::Tensor hypers({count, kHyperDims});
  std::vector<std::pair<std::size_t, std::size_t>> links;
  std::vector<std::size_t> hyper_rows(count);
  std::size_t base = 0;
  for (std::size_t gi = 0; gi < count; ++gi) {
    const auto& g = *graphs[gi];
    const std::size_t n = g.ops.size();
    for (std::size_t u = 0; u < n; ++u) onehots.at(base + u, g.ops[u]) = 1.0;
    for (std::size_t f = 0; f < kHyperDims; ++f) hypers.at(gi, f) = g.hyper[f];
    hyper_rows[gi] = total_ops + gi;
    auto global = [&](std::size_t local) { return local == n ? hyper_rows[gi] : base + local; };
    for (const auto& [dst, src] : g.links) links.emplace_back(global(dst), global(src));
    base += n;
  }
  auto op_features = ad::matmul(tape.constant(std::move(onehots)), tape.parameter(m.op_embed));
  auto hyper_features = ad::matmul(tape.constant(std::move(hypers)), tape.parameter(m.hyper_embed));
  ad::Var h = ad::concat_rows({op_features, hyper_features});
  for (std::size_t k = 0; k < m.gin.size(); ++k) {
    auto agg = ad::graph_propagate(h, links);
    if (k + 1 == m.gin.size()) {
      // Only the Hyper rows are read out after the last layer.
      h = gin_layer(ad::gather_rows(h, hyper_rows), ad::gather_rows(agg, hyper_rows), m.gin[k], tape);
      return h;
    }
    h = gin_layer(h, agg, m.gin[k], tape);
  }
  return ad::gather_rows(h, hyper_rows);
}

/// sigmoid(FC(concat(l_first, l_second))) for each row pair.
inline ad::Var classify_pairs(ad::Tape& tape, const ComparatorModel& m, const ad::Var& first, const ad::Var& second) {
  auto joined = ad::concat_last({first, second});
  return ad::sigmoid(ad::add(ad::matmul(joined, tape.parameter(m.cls_w)), tape.parameter(m.cls_b)));
}

inline ad::Tensor embed_all(const ComparatorModel& m, std::span<const EncodedGraph> graphs,
                            std::size_t chunk = 256) {
  const std::size_t d = m.config().hidden;
  ad::Tensor out({graphs.size(), d});
  for (std::size_t start = 0; start < graphs.size(); start += chunk) {
    const std::size_t end = std::min(graphs.size(), start + chunk);
    std::vector<const EncodedGraph*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&graphs[i]);
    ad::Tape tape(false);
    const auto& e = embed_graphs(tape, m, ptrs).value();
    std::copy(e.values().begin(), e.values().end(), out.data() + start * d);
  }
  return out;
}

struct Comparison {
  double probability = 0.5;
  bool first_better = true;  // probability >= 0.5
};

/// Comparator over a fixed candidate list with each embedding computed once.
class PairScorer {
 public:
  PairScorer(const ComparatorModel& m, std::span<const EncodedGraph> graphs) {
    const std::size_t d = m.config().hidden;
    const ad::Tensor emb = embed_all(m, graphs);
    first_.resize(graphs.size());
    second_.resize(graphs.size());
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      double a = 0.0, b = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        a += emb.at(i, c) * m.cls_w.value[c];
        b += emb.at(i, c) * m.cls_w.value[d + c];
      }
      first_[i] = a;
      second_[i] = b;
    }
    bias_ = m.cls_b.value[0];
  }

  Comparison operator()(std::size_t i, std::size_t j) const {
    ++calls_;
    const double p = 1.0 / (1.0 + std::exp(-(first_[i] + second_[j] + bias_)));
    return {p, p >= 0.5};
  }

  std::size_t size() const { return first_.size(); }
  std::size_t calls() const { return calls_; }

 private:
  std::vector<double> first_, second_;
  double bias_ = 0.0;
  mutable std::size_t calls_ = 0;
};

inline std::vector<EncodedGraph> encode_all(std::span<const ArchHyper> cands, const SpaceConfig& space) {
  std::vector<EncodedGraph> out;
  out.reserve(cands.size());
  for (const auto& ah : cands) out.push_back(encode_graph(ah, space));
  return out;
}

/// p and decision for "a is better-or-equal to b".
inline Comparison compare(const ComparatorModel& m, const ArchHyper& a, const ArchHyper& b) {
  const std::vector<ArchHyper> pair{a, b};
  const auto graphs = encode_all(pair, m.space());
  return PairScorer(m, graphs)(0, 1);
}

// ---- ranking --------------------------------------------------------------

struct Ranking {
  std::vector<std::size_t> order;  // best first
  std::vector<int> wins;
  std::vector<double> probability_sum;
  std::size_t comparator_calls = 0;
};

/// Copeland ranking from one comparison per unordered pair (i < j); ties broken
/// by summed win probability, then by index.
template <class Compare>
Ranking rank_by_comparisons(std::size_t n, Compare&& cmp) {
  if (n == 0) throw Error("cannot rank an empty candidate list");
  Ranking r;
  r.wins.assign(n, 0);
  r.probability_sum.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const Comparison c = cmp(i, j);
      ++r.comparator_calls;
      ++r.wins[c.first_better ? i : j];
      r.probability_sum[i] += c.probability;
      r.probability_sum[j] += 1.0 - c.probability;
    }
  }
  r.order.resize(n);
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
    if (r.wins[a] != r.wins[b]) return r.wins[a] > r.wins[b];
    if (r.probability_sum[a] != r.probability_sum[b]) return r.probability_sum[a] > r.probability_sum[b];
    return a < b;
  });
  return r;
}

inline Ranking rank_candidates(const ComparatorModel& m, std::span<const ArchHyper> cands) {
  const auto graphs = encode_all(cands, m.space());
  const PairScorer scorer(m, graphs);
  return rank_by_comparisons(cands.size(), scorer);
}

/// Fraction of unordered pairs whose decision matches the true error order (lower is better).
inline double pairwise_accuracy(const ComparatorModel& m, std::span<const ArchHyper> cands,
                                std::span<const double> true_errors) {
  if (cands.size() != true_errors.size() || cands.size() < 2) {
    throw Error("pairwise_accuracy needs matching candidate/score lists of length >= 2");
  }
  const auto graphs = encode_all(cands, m.space());
  const PairScorer scorer(m, graphs);
  std::size_t agree = 0, total = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    for (std::size_t j = i + 1; j < cands.size(); ++j) {
      agree += scorer(i, j).first_better == (true_errors[i] <= true_errors[j]);
      ++total;
    }
  }
  return static_cast<double>(agree) / static_cast<double>(total);
}

// ---- training -------------------------------------------------------------

struct AhcTrainConfig {
  int warmup_epochs = 10;        // k_t
  int finetune_max_epochs = 10;
  int patience = 3;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double weight_decay = 5e-4;
  double holdout_fraction = 0.1;
  std::size_t max_pairs_per_epoch = 0;  // 0 = all training pairs every epoch
  std::uint64_t seed = 0;
};

struct AhcTrainHistory {
  std::vector<double> train_loss;  // one entry per epoch, both phases
  std::vector<double> holdout_loss;
  int warmup_epochs_run = 0;
  int finetune_epochs_run = 0;
};

namespace detail {

struct PairIndex {
  std::size_t first, second;
  double label;
};

/// Deduplicated graphs plus index pairs for a sample set.
struct PairPool {
  std::vector<EncodedGraph> graphs;
  std::unordered_map<std::string, std::size_t> index;

  std::size_t intern(const ArchHyper& ah, const SpaceConfig& space) {
    auto key = candidate_key(ah);
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    graphs.push_back(encode_graph(ah, space));
    index.emplace(std::move(key), graphs.size() - 1);
    return graphs.size() - 1;
  }

  std::vector<PairIndex> add(std::span<const ComparisonSample> samples, const SpaceConfig& space) {
    std::vector<PairIndex> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
      if (s.label != 0 && s.label != 1) throw Error("comparison labels must be binary");
      out.push_back({intern(s.ah1, space), intern(s.ah2, space), static_cast<double>(s.label)});
    }
    return out;
  }
};

inline ad::Var batch_loss(ad::Tape& tape, const ComparatorModel& m, const PairPool& pool,
                          std::span<const PairIndex> batch) {
  std::vector<std::size_t> uniq;
  std::vector<std::size_t> first_rows, second_rows;
  auto slot = [&](std::size_t g) {
    auto it = std::find(uniq.begin(), uniq.end(), g);
    if (it != uniq.end()) return static_cast<std::size_t>(it - uniq.begin());
    uniq.push_back(g);
    return uniq.size() - 1;
  };
  ad::Tensor labels({batch.size(), 1});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    first_rows.push_back(slot(batch[b].first));
    second_rows.push_back(slot(batch[b].second));
    labels[b] = batch[b].label;
  }
  std::vector<const EncodedGraph*> ptrs;
  for (auto g : uniq) ptrs.push_back(&pool.graphs[g]);
  auto emb = embed_graphs(tape, m, ptrs);
  auto p = classify_pairs(tape, m, ad::gather_rows(emb, first_rows), ad::gather_rows(emb, second_rows));
  return ad::bce_loss(p, labels);
}

inline double mean_loss(const ComparatorModel& m, const PairPool& pool, std::span<const PairIndex> pairs) {
  if (pairs.empty()) return 0.0;
  const auto emb = embed_all(m, pool.graphs);
  ad::Tape tape(false);
  const auto e = tape.constant_ref(emb);
  std::vector<std::size_t> first, second;
  ad::Tensor labels({pairs.size(), 1});
  for (std::size_t b = 0; b < pairs.size(); ++b) {
    first.push_back(pairs[b].first);
    second.push_back(pairs[b].second);
    labels[b] = pairs[b].label;
  }
  auto p = classify_pairs(tape, m, ad::gather_rows(e, first), ad::gather_rows(e, second));
  return ad::bce_loss(p, labels).value()[0];
}

/// Trains on `pairs` for up to max_epochs with early stopping on a held-out
/// split; the best held-out parameters are restored. When `count_initial` is
/// set the untrained starting point competes as epoch 0.
inline int train_phase(ComparatorModel& m, const PairPool& pool, std::vector<PairIndex> pairs, int max_epochs,
                       bool count_initial, const AhcTrainConfig& cfg, Rng& rng, AhcTrainHistory& history) {
  if (max_epochs <= 0 || pairs.empty()) return 0;
  std::shuffle(pairs.begin(), pairs.end(), rng);
  std::size_t holdout = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(pairs.size())));
  if (pairs.size() >= 2 && cfg.holdout_fraction > 0.0) holdout = std::max<std::size_t>(holdout, 1);
  const std::vector<PairIndex> val(pairs.end() - static_cast<std::ptrdiff_t>(holdout), pairs.end());
  std::vector<PairIndex> train(pairs.begin(), pairs.end() - static_cast<std::ptrdiff_t>(holdout));

  auto params = m.parameters();
  auto snapshot = [&] {
    std::vector<ad::Tensor> s;
    for (auto* p : params) s.push_back(p->value);
    return s;
  };
  std::vector<ad::Tensor> best = snapshot();
  double best_val = count_initial && !val.empty() ? mean_loss(m, pool, val) : std::numeric_limits<double>::infinity();
  int bad = 0, epochs = 0;
  ad::AdamState adam;
  const ad::AdamConfig adam_cfg{.lr = cfg.lr, .weight_decay = cfg.weight_decay};
  std::bernoulli_distribution flip(0.5);
  const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double epoch_loss = 0.0;
    const std::size_t used = cfg.max_pairs_per_epoch ? std::min(cfg.max_pairs_per_epoch, train.size()) : train.size();
    std::vector<PairIndex> batch;
    for (std::size_t s = 0; s < used; s += bs) {
      batch.assign(train.begin() + static_cast<std::ptrdiff_t>(s),
                   train.begin() + static_cast<std::ptrdiff_t>(std::min(used, s + bs)));
      for (auto& pr : batch) {
        if (flip(rng)) pr = {pr.second, pr.first, 1.0 - pr.label};
      }
      ad::Tape tape;
      auto loss = batch_loss(tape, m, pool, batch);
      const double v = loss.value()[0];
      if (!std::isfinite(v)) throw Error("comparator training produced a non-finite loss");
      epoch_loss += v * static_cast<double>(batch.size());
      const auto grads = tape.backward(loss);
      ad::adam_step(params, grads, adam, adam_cfg);
    }
    ++epochs;
    history.train_loss.push_back(used == 0 ? 0.0 : epoch_loss / static_cast<double>(used));
    if (val.empty()) {
      history.holdout_loss.push_back(history.train_loss.back());
      best = snapshot();
      continue;
    }
    const double v = mean_loss(m, pool, val);
    history.holdout_loss.push_back(v);
    if (v < best_val) {
      best_val = v;
      best = snapshot();
      bad = 0;
    } else if (++bad >= cfg.patience) {
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
  return epochs;
}

}  // namespace detail

/// Warm-up on noisy samples, then fine-tune on clean samples.
inline AhcTrainHistory train_denoising(ComparatorModel& m, std::span<const ComparisonSample> noisy,
                                       std::span<const ComparisonSample> clean, const AhcTrainConfig& cfg) {
  if (noisy.empty()) throw Error("train_denoising: noisy sample set is empty");
  if (clean.empty()) throw Error("train_denoising: clean sample set is empty");
  detail::PairPool pool;
  auto noisy_pairs = pool.add(noisy, m.space());
  auto clean_pairs = pool.add(clean, m.space());
  Rng rng(derive_seed(cfg.seed, 0xA11C));
  AhcTrainHistory h;
  h.warmup_epochs_run = detail::train_phase(m, pool, std::move(noisy_pairs), cfg.warmup_epochs, false, cfg, rng, h);
  h.finetune_epochs_run =
      detail::train_phase(m, pool, std::move(clean_pairs), cfg.finetune_max_epochs, true, cfg, rng, h);
  return h;
}

/// Single-source training (used for the noisy-only, clean-only and blended ablations).
inline AhcTrainHistory train_single_phase(ComparatorModel& m, std::span<const ComparisonSample> samples,
                                          int max_epochs, const AhcTrainConfig& cfg) {
  if (samples.empty()) throw Error("train_single_phase: sample set is empty");
  detail::PairPool pool;
  auto pairs = pool.add(samples, m.space());
  Rng rng(derive_seed(cfg.seed, 0xA11C));
  AhcTrainHistory h;
  h.warmup_epochs_run = detail::train_phase(m, pool, std::move(pairs), max_epochs, false, cfg, rng, h);
  return h;
}

/// Adapts a trained comparator to a new dataset: noisy then clean target samples,
/// at most `epochs` epochs per phase.
inline ComparatorModel transfer_finetune(const ComparatorModel& pretrained, std::span<const ComparisonSample> noisy,
                                         std::span<const ComparisonSample> clean, int epochs = 3,
                                         AhcTrainConfig cfg = {}, AhcTrainHistory* history = nullptr) {
  ComparatorModel m = pretrained;
  if (epochs <= 0) return m;
  detail::PairPool pool;
  auto noisy_pairs = pool.add(noisy, m.space());
  auto clean_pairs = pool.add(clean, m.space());
  Rng rng(derive_seed(cfg.seed, 0x7A45));
  AhcTrainHistory h;
  h.warmup_epochs_run = detail::train_phase(m, pool, std::move(noisy_pairs), epochs, true, cfg, rng, h);
  h.finetune_epochs_run = detail::train_phase(m, pool, std::move(clean_pairs), epochs, true, cfg, rng, h);
  if (history) *history = h;
  return m;
}

}  // namespace ctsearch

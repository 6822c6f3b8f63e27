#pragma once

// Forecasting model built from an arch-hyper: input projection, B stacked
// ST-blocks that instantiate the DAG, and a two-layer output head.
// Activations use the layout [batch, series, time, channels].

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctsearch/autodiff.hpp"
#include "ctsearch/data.hpp"
#include "ctsearch/searchspace.hpp"

namespace ctsearch {

struct ForecastShape {
  std::size_t N = 1;
  std::size_t F = 1;
  WindowConfig window;
};

enum class AdjacencySource { Auto, Predefined, Adaptive };

struct ModelOptions {
  AdjacencySource adjacency = AdjacencySource::Auto;
  std::size_t adaptive_dim = 8;
  std::size_t diffusion_steps = 2;
  double dropout = 0.3;
};

inline constexpr std::size_t kGdccKernel = 2;

/// Per-forward context: training flag and dropout RNG.
struct ForwardPass {
  bool training = false;
  Rng* rng = nullptr;
};

class ForecastModel {
 public:
  struct EdgeOp {
    Edge edge;
    std::vector<ad::Parameter*> params;
    std::size_t dilation = 1;
  };

  ForecastModel(const ArchHyper& ah, ForecastShape shape, std::uint64_t seed,
                const std::optional<std::vector<double>>& adjacency = {}, ModelOptions opts = {})
      : ah_(ah), shape_(shape), opts_(opts) {
    if (ah.hyper.C % 2 == 0) throw Error("even node count C=" + std::to_string(ah.hyper.C) + " is not supported");
    if (ah.arch.num_nodes != ah.hyper.C) throw Error("ArchDag node count differs from C");
    ah_.arch.canonicalize();
    Rng rng(derive_seed(seed, 0xF0CA));
    const std::size_t h = static_cast<std::size_t>(ah.hyper.H), f = shape.F;
    in_w_ = add_uniform("input.w", {f, h}, f, rng);
    in_b_ = add_uniform("input.b", {h}, f, rng);

    bool needs_graph = false;
    for (const auto& e : ah_.arch.edges) needs_graph |= e.op == OperatorKind::DGCN;
    if (needs_graph) setup_graph(adjacency, rng);

    const std::size_t s = opts_.diffusion_steps;
    for (int b = 0; b < ah.hyper.B; ++b) {
      std::vector<EdgeOp> ops;
      for (std::size_t k = 0; k < ah_.arch.edges.size(); ++k) {
        const Edge& e = ah_.arch.edges[k];
        EdgeOp op{e, {}, std::size_t{1} << b};
        const std::string p = "block" + std::to_string(b) + ".edge" + std::to_string(k) + "." + std::string(operator_name(e.op)) + ".";
        switch (e.op) {
          case OperatorKind::GDCC:
            op.params = {add_uniform(p + "filter.w", {kGdccKernel * h, h}, kGdccKernel * h, rng),
                         add_uniform(p + "filter.b", {h}, kGdccKernel * h, rng),
                         add_uniform(p + "gate.w", {kGdccKernel * h, h}, kGdccKernel * h, rng),
                         add_uniform(p + "gate.b", {h}, kGdccKernel * h, rng)};
            break;
          case OperatorKind::DGCN:
            // Stacked weights, row blocks: [W0f, W0b, W1f..WSf, W1b..WSb].
            op.params = {add_uniform(p + "w", {(2 * s + 2) * h, h}, (2 * s + 2) * h, rng),
                         add_uniform(p + "b", {h}, (2 * s + 2) * h, rng)};
            break;
          case OperatorKind::INF_T:
          case OperatorKind::INF_S:
            op.params = {add_uniform(p + "q", {h, h}, h, rng), add_uniform(p + "k", {h, h}, h, rng),
                         add_uniform(p + "v", {h, h}, h, rng), add_uniform(p + "o", {h, h}, h, rng),
                         add_uniform(p + "o.b", {h}, h, rng)};
            break;
          case OperatorKind::IDENTITY:
            break;
        }
        ops.push_back(std::move(op));
      }
      blocks_.push_back(std::move(ops));
      const std::string n = "block" + std::to_string(b) + ".norm.";
      norms_.push_back({add_constant(n + "gain", {h}, 1.0), add_constant(n + "bias", {h}, 0.0)});
    }
    const std::size_t i = static_cast<std::size_t>(ah.hyper.I);
    const std::size_t out = shape.window.output_steps() * f;
    head_w1_ = add_uniform("head.w1", {h, i}, h, rng);
    head_b1_ = add_uniform("head.b1", {i}, h, rng);
    head_w2_ = add_uniform("head.w2", {i, out}, i, rng);
    head_b2_ = add_uniform("head.b2", {out}, i, rng);
  }

  ForecastModel(const ForecastModel&) = delete;
  ForecastModel& operator=(const ForecastModel&) = delete;
  ForecastModel(ForecastModel&&) = default;
  ForecastModel& operator=(ForecastModel&&) = default;

  const ArchHyper& arch_hyper() const { return ah_; }
  const ForecastShape& shape() const { return shape_; }
  const ModelOptions& options() const { return opts_; }
  const std::vector<std::vector<EdgeOp>>& blocks() const { return blocks_; }
  bool uses_adaptive_graph() const { return emb1_ != nullptr; }

  std::vector<ad::Parameter*> parameters() {
    std::vector<ad::Parameter*> out;
    for (auto& p : store_) out.push_back(&p);
    return out;
  }
  std::vector<const ad::Parameter*> parameters() const {
    std::vector<const ad::Parameter*> out;
    for (const auto& p : store_) out.push_back(&p);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : store_) n += p.value.size();
    return n;
  }

  ad::Var apply_operator(ad::Tape& tape, const EdgeOp& op, const ad::Var& x, const std::vector<ad::Var>& transitions) const {
    auto p = [&](std::size_t k) { return tape.parameter(*op.params[k]); };
    switch (op.edge.op) {
      case OperatorKind::GDCC: {
        auto z = ad::concat_last({x, ad::time_shift(x, op.dilation)});
        auto filt = ad::tanh(ad::add(ad::matmul(z, p(0)), p(1)));
        auto gate = ad::sigmoid(ad::add(ad::matmul(z, p(2)), p(3)));
        return ad::mul(filt, gate);
      }
      case OperatorKind::DGCN: {
        const std::size_t s = opts_.diffusion_steps;
        std::vector<ad::Var> parts{x, x};
        for (std::size_t dir = 0; dir < 2; ++dir) {
          ad::Var m = x;
          for (std::size_t k = 0; k < s; ++k) {
            m = ad::node_mix(transitions[dir], m);
            parts.push_back(m);
          }
        }
        return ad::add(ad::matmul(ad::concat_last(parts), p(0)), p(1));
      }
      case OperatorKind::INF_T: {
        auto att = ad::attention(ad::matmul(x, p(0)), ad::matmul(x, p(1)), ad::matmul(x, p(2)), true);
        return ad::add(ad::matmul(att, p(3)), p(4));
      }
      case OperatorKind::INF_S: {
        auto xs = ad::swap_series_time(x);
        auto att = ad::attention(ad::matmul(xs, p(0)), ad::matmul(xs, p(1)), ad::matmul(xs, p(2)), false);
        return ad::add(ad::matmul(ad::swap_series_time(att), p(3)), p(4));
      }
      case OperatorKind::IDENTITY:
        return x;
    }
    throw Error("unknown operator");
  }

  /// Forward and backward transition matrices for DGCN (empty if unused).
  std::vector<ad::Var> transitions(ad::Tape& tape) const {
    if (!fixed_transitions_.empty()) {
      return {tape.constant_ref(fixed_transitions_[0]), tape.constant_ref(fixed_transitions_[1])};
    }
    if (!emb1_) return {};
    auto e1 = tape.parameter(*emb1_), e2 = tape.parameter(*emb2_);
    return {ad::softmax_last(ad::relu(ad::matmul(e1, ad::transpose(e2)))),
            ad::softmax_last(ad::relu(ad::matmul(e2, ad::transpose(e1))))};
  }

  ad::Var block_forward(ad::Tape& tape, std::size_t b, const ad::Var& in, const std::vector<ad::Var>& trans,
                        const ForwardPass& pass) const {
    const std::size_t c = static_cast<std::size_t>(ah_.hyper.C);
    std::vector<std::optional<ad::Var>> nodes(c);
    nodes[0] = in;
    for (std::size_t j = 1; j < c; ++j) {
      for (const auto& op : blocks_[b]) {
        if (static_cast<std::size_t>(op.edge.dst) != j) continue;
        if (!nodes[op.edge.src]) throw Error("node " + std::to_string(op.edge.src) + " has no value");
        ad::Var y = apply_operator(tape, op, *nodes[op.edge.src], trans);
        if (ah_.hyper.delta == 1 && pass.training) y = dropout(tape, y, *pass.rng);
        nodes[j] = nodes[j] ? ad::add(*nodes[j], y) : y;
      }
      if (!nodes[j]) throw Error("node " + std::to_string(j) + " has no incoming edge");
    }
    if (ah_.hyper.U == 0) return *nodes[c - 1];
    ad::Var out = *nodes[1];
    for (std::size_t j = 3; j < c; j += 2) out = ad::add(out, *nodes[j]);
    return out;
  }

  /// Input projection followed by the stacked pre-normalized residual blocks: [B,N,P,H].
  ad::Var backbone(ad::Tape& tape, const ad::Var& x, const ForwardPass& pass = {}) const {
    ad::Var h = ad::add(ad::matmul(x, tape.parameter(*in_w_)), tape.parameter(*in_b_));
    const auto trans = transitions(tape);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& [gain, bias] = norms_[b];
      auto in = ad::add(ad::mul(ad::layer_norm_last(h), tape.parameter(*gain)), tape.parameter(*bias));
      h = ad::add(h, block_forward(tape, b, in, trans, pass));
    }
    return h;
  }

  /// x: [B, N, P, F] -> predictions [B, N, steps * F] (normalized units).
  ad::Var forward(ad::Tape& tape, const ad::Var& x, const ForwardPass& pass = {}) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != shape_.N || s[2] != shape_.window.P || s[3] != shape_.F) {
      throw Error("forecaster input must be [batch, " + std::to_string(shape_.N) + ", " +
                  std::to_string(shape_.window.P) + ", " + std::to_string(shape_.F) + "], got " + ad::shape_string(s));
    }
    auto h = backbone(tape, x, pass);
    auto last = ad::select_time(h, shape_.window.P - 1);
    auto hidden = ad::relu(ad::add(ad::matmul(last, tape.parameter(*head_w1_)), tape.parameter(*head_b1_)));
    return ad::add(ad::matmul(hidden, tape.parameter(*head_w2_)), tape.parameter(*head_b2_));
  }

  ad::Tensor predict(const ad::Tensor& x) const {
    ad::Tape tape(false);
    return forward(tape, tape.constant_ref(x)).value();
  }

  Json header() const {
    return Json{{"ah", to_json(ah_)},
                {"N", shape_.N},
                {"F", shape_.F},
                {"P", shape_.window.P},
                {"Q", shape_.window.Q},
                {"mode", to_string(shape_.window.mode)},
                {"single_target_offset", shape_.window.single_target_offset},
                {"output_node", ah_.hyper.U == 0 ? "last" : "odd_sum"},
                {"adaptive_graph", uses_adaptive_graph()}};
  }

 private:
  ad::Parameter* add_constant(std::string name, ad::Shape shape, double v) {
    ad::Tensor t(std::move(shape));
    for (double& x : t.values()) x = v;
    store_.push_back({std::move(name), std::move(t)});
    return &store_.back();
  }

  ad::Parameter* add_uniform(std::string name, ad::Shape shape, std::size_t fan_in, Rng& rng) {
    store_.push_back(ad::uniform_parameter(std::move(name), std::move(shape), fan_in, rng));
    return &store_.back();
  }

  ad::Var dropout(ad::Tape& tape, const ad::Var& y, Rng& rng) const {
    const double keep = 1.0 - opts_.dropout;
    if (keep >= 1.0) return y;
    std::bernoulli_distribution bern(keep);
    ad::Tensor mask(y.shape());
    for (double& m : mask.values()) m = bern(rng) ? 1.0 / keep : 0.0;
    return ad::mul(y, tape.constant(std::move(mask)));
  }

  static ad::Tensor row_normalized(const std::vector<double>& a, std::size_t n, bool transpose) {
    ad::Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += transpose ? a[j * n + i] : a[i * n + j];
      if (s <= 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) t.at(i, j) = (transpose ? a[j * n + i] : a[i * n + j]) / s;
    }
    return t;
  }

  void setup_graph(const std::optional<std::vector<double>>& adjacency, Rng& rng) {
    const bool use_fixed = opts_.adjacency == AdjacencySource::Predefined ||
                           (opts_.adjacency == AdjacencySource::Auto && adjacency.has_value());
    if (use_fixed) {
      if (!adjacency) throw Error("DGCN needs an adjacency matrix but none was provided and self-adaptive is disabled");
      if (adjacency->size() != shape_.N * shape_.N) throw Error("adjacency size does not match N");
      fixed_transitions_ = {row_normalized(*adjacency, shape_.N, false), row_normalized(*adjacency, shape_.N, true)};
      return;
    }
    emb1_ = add_uniform("graph.e1", {shape_.N, opts_.adaptive_dim}, opts_.adaptive_dim, rng);
    emb2_ = add_uniform("graph.e2", {shape_.N, opts_.adaptive_dim}, opts_.adaptive_dim, rng);
  }

  ArchHyper ah_;
  ForecastShape shape_;
  ModelOptions opts_;
  std::deque<ad::Parameter> store_;
  ad::Parameter *in_w_ = nullptr, *in_b_ = nullptr;
  ad::Parameter *emb1_ = nullptr, *emb2_ = nullptr;
  std::vector<ad::Tensor> fixed_transitions_;
  std::vector<std::vector<EdgeOp>> blocks_;
  std::vector<std::pair<ad::Parameter*, ad::Parameter*>> norms_;  // per block gain, bias
  ad::Parameter *head_w1_ = nullptr, *head_b1_ = nullptr, *head_w2_ = nullptr, *head_b2_ = nullptr;
};

inline ForecastModel build_model(const ArchHyper& ah, const ForecastShape& shape, std::uint64_t seed,
                                 const std::optional<std::vector<double>>& adjacency = {}, ModelOptions opts = {}) {
  return ForecastModel(ah, shape, seed, adjacency, opts);
}

// ---- metrics -------------------------------------------------------------

struct Metrics {
  ForecastMode mode = ForecastMode::Multi;
  double mae = 0, rmse = 0, mape = 0;
  double rrse = 0, corr = 0;
};

inline Json to_json(const Metrics& m) {
  if (m.mode == ForecastMode::Multi) return Json{{"MAE", m.mae}, {"RMSE", m.rmse}, {"MAPE", m.mape}};
  return Json{{"RRSE", m.rrse}, {"CORR", m.corr}};
}

/// pred/truth laid out [samples, series, k]; MAPE skips |truth| < 1e-8.
/// RRSE and CORR (single mode) need every series to vary.
inline Metrics evaluate_metrics(const std::vector<double>& pred, const std::vector<double>& truth, std::size_t series,
                                std::size_t k, ForecastMode mode) {
  if (pred.size() != truth.size()) {
    throw Error("prediction/truth size mismatch: " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()));
  }
  if (truth.empty() || series == 0 || k == 0 || truth.size() % (series * k) != 0) {
    throw Error("metrics need a non-empty [samples, series, k] layout");
  }
  Metrics m;
  m.mode = mode;
  const double n = static_cast<double>(truth.size());
  double abs_sum = 0, sq_sum = 0, pct_sum = 0;
  std::size_t pct_count = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = pred[i] - truth[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
    if (std::abs(truth[i]) >= 1e-8) {
      pct_sum += std::abs(d / truth[i]);
      ++pct_count;
    }
  }
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.mape = pct_count ? pct_sum / static_cast<double>(pct_count) : 0.0;
  if (mode == ForecastMode::Multi) return m;

  const std::size_t samples = truth.size() / (series * k);
  double mean = 0;
  for (double t : truth) mean += t;
  mean /= n;
  double denom = 0;
  for (double t : truth) denom += (t - mean) * (t - mean);
  double corr_sum = 0;
  for (std::size_t c = 0; c < series; ++c) {
    double mp = 0, mt = 0;
    for (std::size_t s = 0; s < samples; ++s)
      for (std::size_t j = 0; j < k; ++j) {
        mp += pred[(s * series + c) * k + j];
        mt += truth[(s * series + c) * k + j];
      }
    const double cnt = static_cast<double>(samples * k);
    mp /= cnt;
    mt /= cnt;
    double spt = 0, spp = 0, stt = 0;
    for (std::size_t s = 0; s < samples; ++s)
      for (std::size_t j = 0; j < k; ++j) {
        const double dp = pred[(s * series + c) * k + j] - mp, dt = truth[(s * series + c) * k + j] - mt;
        spt += dp * dt;
        spp += dp * dp;
        stt += dt * dt;
      }
    if (stt <= 0.0) throw Error("RRSE/CORR undefined: truth of series " + std::to_string(c) + " is constant");
    // A constant prediction carries no correlation.
    corr_sum += spp > 0.0 ? spt / std::sqrt(spp * stt) : 0.0;
  }
  m.rrse = std::sqrt(sq_sum / denom);
  m.corr = corr_sum / static_cast<double>(series);
  return m;
}

// ---- training ------------------------------------------------------------

struct TrainConfig {
  int epochs = 100;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int patience = 0;                   // 0 disables early stopping
  std::size_t max_train_windows = 0;  // windows drawn per epoch, 0 = all
  std::size_t eval_stride = 1;        // validation/test window stride
  std::uint64_t seed = 0;
};

struct TrainResult {
  double best_val_error = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int epochs_run = 0;
  std::vector<double> train_loss;
  std::vector<double> val_error;
};

inline void fill_batch(const WindowSet& w, std::span<const std::size_t> idx, ad::Tensor& x, ad::Tensor& y) {
  const auto& s = w.split();
  const std::size_t in = s.N * w.config().P * s.F, out = s.N * w.config().output_steps() * s.F;
  x = ad::Tensor({idx.size(), s.N, w.config().P, s.F});
  y = ad::Tensor({idx.size(), s.N, w.config().output_steps() * s.F});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    w.fill_input(idx[b], x.data() + b * in);
    w.fill_target(idx[b], y.data() + b * out);
  }
}

inline std::vector<std::size_t> strided_indices(std::size_t count, std::size_t stride) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; i += std::max<std::size_t>(1, stride)) out.push_back(i);
  return out;
}

/// Predictions and truths in original units, both laid out [windows, N, steps * F].
struct Forecasts {
  std::vector<double> pred, truth;
  std::size_t series = 0, k = 0;
};

inline Forecasts forecast_windows(const ForecastModel& m, const WindowSet& w, const Scaler& scaler,
                                  std::span<const std::size_t> idx, std::size_t chunk = 256) {
  Forecasts out;
  out.series = w.split().N;
  const std::size_t f = w.split().F;
  out.k = w.config().output_steps() * f;
  ad::Tensor x, y;
  for (std::size_t s = 0; s < idx.size(); s += chunk) {
    const auto part = idx.subspan(s, std::min(chunk, idx.size() - s));
    fill_batch(w, part, x, y);
    const auto p = m.predict(x);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const std::size_t feat = (i % out.k) % f;
      out.pred.push_back(scaler.inverse(p[i], feat));
      out.truth.push_back(scaler.inverse(y[i], feat));
    }
  }
  return out;
}

/// Validation error: MAE (multi-step) or RRSE (single-step), original units.
inline double split_error(const ForecastModel& m, const WindowSet& w, const Scaler& scaler, std::size_t stride) {
  const auto idx = strided_indices(w.size(), stride);
  const auto fc = forecast_windows(m, w, scaler, idx);
  const auto mode = w.config().mode;
  const auto metrics = evaluate_metrics(fc.pred, fc.truth, fc.series, fc.k, mode);
  return mode == ForecastMode::Multi ? metrics.mae : metrics.rrse;
}

inline Metrics split_metrics(const ForecastModel& m, const WindowSet& w, const Scaler& scaler, std::size_t stride) {
  const auto idx = strided_indices(w.size(), stride);
  const auto fc = forecast_windows(m, w, scaler, idx);
  return evaluate_metrics(fc.pred, fc.truth, fc.series, fc.k, w.config().mode);
}

/// MAE-trained with Adam; keeps (and restores) the parameters with the best
/// validation error over epochs 1..epochs, or the initial ones when epochs = 0.
inline TrainResult train_model(ForecastModel& m, const SplitData& data, const TrainConfig& cfg) {
  const auto& wc = m.shape().window;
  const WindowSet train(data.train, wc), val(data.val, wc);
  auto params = m.parameters();
  TrainResult r;
  if (cfg.epochs <= 0) {
    r.best_val_error = split_error(m, val, data.scaler, cfg.eval_stride);
    r.val_error.push_back(r.best_val_error);
    return r;
  }
  Rng rng(derive_seed(cfg.seed, 0x7EA1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ad::AdamState adam;
  const ad::AdamConfig adam_cfg{.lr = cfg.lr, .weight_decay = cfg.weight_decay};
  const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
  const std::size_t per_epoch = cfg.max_train_windows ? std::min(cfg.max_train_windows, order.size()) : order.size();
  std::vector<ad::Tensor> best;
  int bad = 0;
  ad::Tensor x, y;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < per_epoch; s += bs) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(bs, per_epoch - s));
      fill_batch(train, idx, x, y);
      ad::Tape tape;
      const ForwardPass pass{true, &rng};
      auto loss = ad::mae_loss(m.forward(tape, tape.constant_ref(x), pass), tape.constant_ref(y));
      const double v = loss.value()[0];
      if (!std::isfinite(v)) {
        throw Error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(s / bs) + " for " + describe(m.arch_hyper()));
      }
      loss_sum += v * static_cast<double>(idx.size());
      const auto grads = tape.backward(loss);
      ad::adam_step(params, grads, adam, adam_cfg);
    }
    r.train_loss.push_back(loss_sum / static_cast<double>(per_epoch));
    const double ve = split_error(m, val, data.scaler, cfg.eval_stride);
    if (!std::isfinite(ve)) throw Error("non-finite validation error at epoch " + std::to_string(epoch));
    r.val_error.push_back(ve);
    r.epochs_run = epoch;
    if (ve < r.best_val_error) {
      r.best_val_error = ve;
      r.best_epoch = epoch;
      best.clear();
      for (auto* p : params) best.push_back(p->value);
      bad = 0;
    } else if (cfg.patience > 0 && ++bad >= cfg.patience) {
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
  return r;
}

/// Error of predicting each series' train mean, on the given split.
inline double mean_predictor_error(const SplitData& data, const WindowSet& w, std::size_t stride = 1) {
  const auto& tr = data.train;
  std::vector<double> mean(tr.N * tr.F, 0.0);
  for (std::size_t n = 0; n < tr.N; ++n)
    for (std::size_t f = 0; f < tr.F; ++f) {
      for (std::size_t t = 0; t < tr.T; ++t) mean[n * tr.F + f] += tr.at(n, t, f);
      mean[n * tr.F + f] /= static_cast<double>(tr.T);
    }
  const std::size_t f_count = tr.F, k = w.config().output_steps() * f_count;
  std::vector<double> pred, truth;
  std::vector<double> target(w.split().N * k);
  for (auto i : strided_indices(w.size(), stride)) {
    w.fill_target(i, target.data());
    for (std::size_t j = 0; j < target.size(); ++j) {
      const std::size_t n = j / k, f = (j % k) % f_count;
      pred.push_back(data.scaler.inverse(mean[n * f_count + f], f));
      truth.push_back(data.scaler.inverse(target[j], f));
    }
  }
  const auto metrics = evaluate_metrics(pred, truth, w.split().N, k, w.config().mode);
  return w.config().mode == ForecastMode::Multi ? metrics.mae : metrics.rrse;
}

struct CandidateResult {
  ArchHyper ah;
  double val_error = 0.0;
  Metrics test_metrics;
  int epochs_run = 0;
  std::uint64_t seed = 0;
  std::size_t parameter_count = 0;
};

inline Json to_json(const CandidateResult& r) {
  return Json{{"ah", to_json(r.ah)},
              {"val_error", r.val_error},
              {"test_metrics", to_json(r.test_metrics)},
              {"epochs_run", r.epochs_run},
              {"seed", r.seed},
              {"parameter_count", r.parameter_count}};
}

/// Builds, trains and evaluates one candidate.
inline CandidateResult train_candidate(const ArchHyper& ah, const SplitData& data, const WindowConfig& wc,
                                       const TrainConfig& cfg, ModelOptions opts = {}) {
  ForecastShape shape{data.train.N, data.train.F, wc};
  ForecastModel m(ah, shape, cfg.seed, data.adjacency, opts);
  const auto tr = train_model(m, data, cfg);
  CandidateResult r;
  r.ah = ah;
  r.val_error = tr.best_val_error;
  r.epochs_run = tr.epochs_run;
  r.seed = cfg.seed;
  r.parameter_count = m.parameter_count();
  r.test_metrics = split_metrics(m, WindowSet(data.test, wc), data.scaler, cfg.eval_stride);
  return r;
}

}  // namespace ctsearch

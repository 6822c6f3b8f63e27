#pragma once

// Correlated time series datasets: CSV ingestion, synthetic generation,
// chronological splits, z-score scaling and sliding windows.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ctsearch/common.hpp"
#include "ctsearch/searchspace.hpp"

namespace ctsearch {

struct SplitRatio {
  double train = 0.6, val = 0.2, test = 0.2;
};

/// Values stored series-major: index (n * T + t) * F + f.
struct CtsDataset {
  std::size_t N = 0, T = 0, F = 0;
  std::vector<double> values;
  std::optional<std::vector<double>> adjacency;  // N x N row-major
  SplitRatio ratio;
  std::string name = "dataset";
  std::string frequency = "unknown";

  double& at(std::size_t n, std::size_t t, std::size_t f) { return values[(n * T + t) * F + f]; }
  double at(std::size_t n, std::size_t t, std::size_t f) const { return values[(n * T + t) * F + f]; }

  void check() const {
    if (N == 0 || T == 0 || F == 0) throw Error("dataset dimensions must be positive");
    if (values.size() != N * T * F) throw Error("dataset value count does not match N*T*F");
    if (adjacency && adjacency->size() != N * N) throw Error("adjacency must be N x N");
  }
};

// ---- CSV -------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_cell(std::string cell, const std::filesystem::path& path, std::size_t row, std::size_t col) {
  while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
  std::size_t start = cell.find_first_not_of(' ');
  if (start == std::string::npos) start = cell.size();
  double v = 0.0;
  const char* b = cell.data() + start;
  const char* e = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || ptr != e || b == e) {
    throw Error(path.string() + ": row " + std::to_string(row) + ", column " + std::to_string(col) +
                ": non-numeric cell '" + cell + "'");
  }
  return v;
}

inline std::vector<std::vector<double>> read_numeric_rows(std::istream& in, const std::filesystem::path& path,
                                                         std::size_t first_row) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t row = first_row;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (rows.empty()) width = cells.size();
    if (cells.size() != width) {
      throw Error(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                  " columns, expected " + std::to_string(width));
    }
    std::vector<double> r;
    r.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) r.push_back(parse_cell(cells[c], path, row, c));
    rows.push_back(std::move(r));
    ++row;
  }
  return rows;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Reads a T-row CSV whose header names columns s{i}_f{j} (series-major), and an
/// optional headerless N x N adjacency CSV.
inline CtsDataset load_csv(const std::filesystem::path& path, const std::optional<std::filesystem::path>& adjacency_path = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw Error(path.string() + ": empty file");
  const auto names = detail::split_csv_line(header);
  std::size_t n_series = 0, n_features = 0;
  std::vector<std::pair<std::size_t, std::size_t>> cols;
  for (std::size_t c = 0; c < names.size(); ++c) {
    std::string nm = names[c];
    while (!nm.empty() && (nm.back() == '\r' || nm.back() == ' ')) nm.pop_back();
    std::size_t i = 0, j = 0;
    if (std::sscanf(nm.c_str(), "s%zu_f%zu", &i, &j) != 2 || nm != "s" + std::to_string(i) + "_f" + std::to_string(j)) {
      throw Error(path.string() + ": header column " + std::to_string(c) + " is '" + nm +
                  "', expected the pattern s{i}_f{j}");
    }
    cols.emplace_back(i, j);
    n_series = std::max(n_series, i + 1);
    n_features = std::max(n_features, j + 1);
  }
  if (cols.size() != n_series * n_features) {
    throw Error(path.string() + ": header must list every s{i}_f{j} for i<N, j<F");
  }
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c].first * n_features + cols[c].second != c) {
      throw Error(path.string() + ": header column " + std::to_string(c) + " out of series-major order");
    }
  }
  const auto rows = detail::read_numeric_rows(in, path, 1);
  if (rows.empty()) throw Error(path.string() + ": no data rows");
  if (rows.front().size() != cols.size()) {
    throw Error(path.string() + ": row 1 has " + std::to_string(rows.front().size()) + " columns, header has " +
                std::to_string(cols.size()));
  }
  CtsDataset ds;
  ds.N = n_series;
  ds.F = n_features;
  ds.T = rows.size();
  ds.name = path.stem().string();
  ds.values.resize(ds.N * ds.T * ds.F);
  for (std::size_t t = 0; t < ds.T; ++t)
    for (std::size_t c = 0; c < cols.size(); ++c) ds.at(cols[c].first, t, cols[c].second) = rows[t][c];

  if (adjacency_path) {
    std::ifstream ain(*adjacency_path);
    if (!ain) throw Error("cannot open " + adjacency_path->string());
    const auto arows = detail::read_numeric_rows(ain, *adjacency_path, 0);
    if (arows.size() != ds.N || arows.empty() || arows.front().size() != ds.N) {
      throw Error(adjacency_path->string() + ": adjacency is " + std::to_string(arows.size()) + "x" +
                  std::to_string(arows.empty() ? 0 : arows.front().size()) + " but the values file has " +
                  std::to_string(ds.N) + " series");
    }
    std::vector<double> a;
    for (std::size_t i = 0; i < ds.N; ++i) {
      for (std::size_t j = 0; j < ds.N; ++j) {
        if (arows[i][j] < 0.0) {
          throw Error(adjacency_path->string() + ": row " + std::to_string(i) + ", column " + std::to_string(j) +
                      ": negative weight");
        }
        a.push_back(arows[i][j]);
      }
    }
    ds.adjacency = std::move(a);
  }
  return ds;
}

inline void save_csv(const CtsDataset& ds, const std::filesystem::path& path,
                     const std::optional<std::filesystem::path>& adjacency_path = {}) {
  ds.check();
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t f = 0; f < ds.F; ++f) out << (n + f ? "," : "") << "s" << n << "_f" << f;
  out << "\n";
  for (std::size_t t = 0; t < ds.T; ++t) {
    for (std::size_t n = 0; n < ds.N; ++n)
      for (std::size_t f = 0; f < ds.F; ++f) out << (n + f ? "," : "") << detail::format_double(ds.at(n, t, f));
    out << "\n";
  }
  if (adjacency_path && ds.adjacency) {
    std::ofstream aout(*adjacency_path);
    if (!aout) throw Error("cannot write " + adjacency_path->string());
    for (std::size_t i = 0; i < ds.N; ++i) {
      for (std::size_t j = 0; j < ds.N; ++j) aout << (j ? "," : "") << detail::format_double((*ds.adjacency)[i * ds.N + j]);
      aout << "\n";
    }
  }
}

// ---- synthetic data ----------------------------------------------------------

struct SyntheticConfig {
  std::size_t N = 8, T = 2000, F = 1;
  std::uint64_t seed = 0;
  double coupling = 0.5;
  std::size_t daily_period = 24;
  std::size_t weekly_period = 168;
  double ar_coefficient = 0.5;
  double noise_scale = 0.3;
};

inline Json to_json(const SyntheticConfig& c) {
  return Json{{"N", c.N}, {"T", c.T}, {"F", c.F}, {"seed", c.seed}, {"coupling", c.coupling},
              {"daily_period", c.daily_period}, {"weekly_period", c.weekly_period},
              {"ar_coefficient", c.ar_coefficient}, {"noise_scale", c.noise_scale}};
}

inline SyntheticConfig synthetic_config_from_json(const Json& j) {
  SyntheticConfig c;
  c.N = j.value("N", c.N);
  c.T = j.value("T", c.T);
  c.F = j.value("F", c.F);
  c.seed = j.value("seed", c.seed);
  c.coupling = j.value("coupling", c.coupling);
  c.daily_period = j.value("daily_period", c.daily_period);
  c.weekly_period = j.value("weekly_period", c.weekly_period);
  c.ar_coefficient = j.value("ar_coefficient", c.ar_coefficient);
  c.noise_scale = j.value("noise_scale", c.noise_scale);
  return c;
}

/// Ring graph plus roughly N/4 random chords; symmetric, binary, zero diagonal.
inline std::vector<double> ring_with_chords(std::size_t n, Rng& rng) {
  std::vector<double> a(n * n, 0.0);
  auto link = [&](std::size_t i, std::size_t j) {
    if (i == j) return;
    a[i * n + j] = 1.0;
    a[j * n + i] = 1.0;
  };
  for (std::size_t i = 0; i < n; ++i) link(i, (i + 1) % n);
  if (n > 3) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t c = 0; c < std::max<std::size_t>(1, n / 4); ++c) link(pick(rng), pick(rng));
  }
  return a;
}

struct SyntheticParts {
  CtsDataset dataset;
  std::vector<double> seasonal;  // same layout as values
  std::vector<double> noise;     // autoregressive part including neighbour coupling
};

/// Each series: two sinusoids (daily and weekly analogue periods) plus an AR(1)
/// process that also receives coupling * the lagged mean of its graph neighbours.
inline SyntheticParts synthesize(const SyntheticConfig& cfg) {
  if (cfg.coupling < 0.0 || cfg.coupling > 1.0) throw Error("synthetic coupling must lie in [0, 1]");
  if (cfg.N == 0 || cfg.T == 0 || cfg.F == 0) throw Error("synthetic dimensions must be positive");
  Rng rng(derive_seed(cfg.seed, 0xDA7A));
  SyntheticParts out;
  CtsDataset& ds = out.dataset;
  ds.N = cfg.N;
  ds.T = cfg.T;
  ds.F = cfg.F;
  ds.name = "synthetic";
  ds.frequency = "1/" + std::to_string(cfg.daily_period) + " day";
  ds.adjacency = ring_with_chords(cfg.N, rng);
  const auto& adj = *ds.adjacency;
  std::vector<std::vector<std::size_t>> neighbours(cfg.N);
  for (std::size_t i = 0; i < cfg.N; ++i)
    for (std::size_t j = 0; j < cfg.N; ++j)
      if (adj[i * cfg.N + j] > 0.0) neighbours[i].push_back(j);

  const std::size_t size = cfg.N * cfg.T * cfg.F;
  ds.values.assign(size, 0.0);
  out.seasonal.assign(size, 0.0);
  out.noise.assign(size, 0.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  auto idx = [&](std::size_t n, std::size_t t, std::size_t f) { return (n * cfg.T + t) * cfg.F + f; };
  for (std::size_t n = 0; n < cfg.N; ++n) {
    for (std::size_t f = 0; f < cfg.F; ++f) {
      const double level = 10.0 + 5.0 * unit(rng);
      const double daily_amp = 3.0 + 2.0 * unit(rng), weekly_amp = 1.0 + unit(rng);
      const double daily_phase = two_pi * unit(rng), weekly_phase = two_pi * unit(rng);
      for (std::size_t t = 0; t < cfg.T; ++t) {
        const double td = static_cast<double>(t);
        out.seasonal[idx(n, t, f)] = level + daily_amp * std::sin(two_pi * td / static_cast<double>(cfg.daily_period) + daily_phase) +
                                     weekly_amp * std::sin(two_pi * td / static_cast<double>(cfg.weekly_period) + weekly_phase);
      }
    }
  }
  // Coupling weight keeps the AR recursion stable: ar + 0.45 < 1.
  const double neighbour_weight = 0.45 * cfg.coupling;
  for (std::size_t t = 0; t < cfg.T; ++t) {
    for (std::size_t n = 0; n < cfg.N; ++n) {
      for (std::size_t f = 0; f < cfg.F; ++f) {
        double r = cfg.noise_scale * gauss(rng);
        if (t > 0) {
          r += cfg.ar_coefficient * out.noise[idx(n, t - 1, f)];
          if (!neighbours[n].empty() && neighbour_weight > 0.0) {
            double m = 0.0;
            for (auto j : neighbours[n]) m += out.noise[idx(j, t - 1, f)];
            r += neighbour_weight * m / static_cast<double>(neighbours[n].size());
          }
        }
        out.noise[idx(n, t, f)] = r;
      }
    }
  }
  for (std::size_t i = 0; i < size; ++i) ds.values[i] = out.seasonal[i] + out.noise[i];
  return out;
}

inline CtsDataset generate_synthetic(const SyntheticConfig& cfg) { return synthesize(cfg).dataset; }

// ---- splitting and scaling ---------------------------------------------------

/// Per-feature z-score statistics.
struct Scaler {
  std::vector<double> mean, std;

  double transform(double v, std::size_t f) const { return (v - mean[f]) / std[f]; }
  double inverse(double v, std::size_t f) const { return v * std[f] + mean[f]; }
};

inline Json to_json(const Scaler& s) { return Json{{"mean", s.mean}, {"std", s.std}}; }
inline Scaler scaler_from_json(const Json& j) {
  Scaler s{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
  if (s.mean.size() != s.std.size()) throw Error("scaler mean/std length mismatch");
  return s;
}

/// Contiguous time slice of a dataset (N x T x F, series-major), already scaled.
struct SeriesSplit {
  std::size_t N = 0, T = 0, F = 0;
  std::size_t offset = 0;  // first timestamp in the source dataset
  std::vector<double> values;

  double at(std::size_t n, std::size_t t, std::size_t f) const { return values[(n * T + t) * F + f]; }
};

struct SplitData {
  SeriesSplit train, val, test;
  Scaler scaler;
  std::optional<std::vector<double>> adjacency;
};

inline std::array<std::size_t, 3> split_lengths(std::size_t T, const SplitRatio& r) {
  const double total = r.train + r.val + r.test;
  if (std::abs(total - 1.0) > 1e-9 || r.train <= 0.0 || r.val < 0.0 || r.test < 0.0) {
    throw Error("split ratios must be non-negative and sum to 1");
  }
  const auto train = static_cast<std::size_t>(std::llround(static_cast<double>(T) * r.train));
  const auto val = static_cast<std::size_t>(std::llround(static_cast<double>(T) * r.val));
  if (train + val > T) throw Error("split ratios leave no room for the test split");
  return {train, val, T - train - val};
}

/// Chronological split; the scaler is fit on the train slice only.
/// `min_length` (typically P + horizon) guards every split.
inline SplitData split_and_normalize(const CtsDataset& ds, const SplitRatio& ratio, std::size_t min_length = 0) {
  ds.check();
  const auto lens = split_lengths(ds.T, ratio);
  static constexpr const char* kNames[] = {"train", "validation", "test"};
  for (std::size_t s = 0; s < 3; ++s) {
    if (lens[s] < min_length) {
      throw Error(std::string(kNames[s]) + " split has " + std::to_string(lens[s]) + " timestamps, needs at least " +
                  std::to_string(min_length));
    }
  }
  SplitData out;
  out.adjacency = ds.adjacency;
  out.scaler.mean.assign(ds.F, 0.0);
  out.scaler.std.assign(ds.F, 0.0);
  const double count = static_cast<double>(ds.N * lens[0]);
  for (std::size_t f = 0; f < ds.F; ++f) {
    double s = 0.0;
    for (std::size_t n = 0; n < ds.N; ++n)
      for (std::size_t t = 0; t < lens[0]; ++t) s += ds.at(n, t, f);
    const double mean = s / count;
    double ss = 0.0;
    for (std::size_t n = 0; n < ds.N; ++n)
      for (std::size_t t = 0; t < lens[0]; ++t) ss += (ds.at(n, t, f) - mean) * (ds.at(n, t, f) - mean);
    const double sd = std::sqrt(ss / count);
    out.scaler.mean[f] = mean;
    out.scaler.std[f] = sd > 1e-12 ? sd : 1.0;
  }
  std::size_t start = 0;
  SeriesSplit* parts[] = {&out.train, &out.val, &out.test};
  for (std::size_t s = 0; s < 3; ++s) {
    SeriesSplit& p = *parts[s];
    p.N = ds.N;
    p.T = lens[s];
    p.F = ds.F;
    p.offset = start;
    p.values.resize(p.N * p.T * p.F);
    for (std::size_t n = 0; n < ds.N; ++n)
      for (std::size_t t = 0; t < p.T; ++t)
        for (std::size_t f = 0; f < ds.F; ++f)
          p.values[(n * p.T + t) * p.F + f] = out.scaler.transform(ds.at(n, start + t, f), f);
    start += lens[s];
  }
  return out;
}

// ---- windows -----------------------------------------------------------------

enum class ForecastMode { Multi, Single };

struct WindowConfig {
  std::size_t P = 12;
  std::size_t Q = 12;
  ForecastMode mode = ForecastMode::Multi;
  std::size_t single_target_offset = 3;

  std::size_t horizon() const { return mode == ForecastMode::Multi ? Q : single_target_offset; }
  /// Number of predicted steps per series and feature.
  std::size_t output_steps() const { return mode == ForecastMode::Multi ? Q : 1; }
};

inline std::string to_string(ForecastMode m) { return m == ForecastMode::Multi ? "multi" : "single"; }
inline ForecastMode parse_forecast_mode(const std::string& s) {
  if (s == "multi") return ForecastMode::Multi;
  if (s == "single") return ForecastMode::Single;
  throw Error("unknown forecast mode '" + s + "' (expected multi|single)");
}

/// Stride-1 sliding windows over one split. Window w covers inputs
/// [w, w+P) and targets [w+P, w+P+Q) (multi) or w+P+offset-1 (single).
class WindowSet {
 public:
  WindowSet(const SeriesSplit& split, WindowConfig cfg) : split_(&split), cfg_(cfg) {
    if (cfg.P == 0) throw Error("window input length P must be >= 1");
    if (cfg.horizon() == 0) throw Error("window horizon must be >= 1");
    const std::size_t need = cfg.P + cfg.horizon();
    if (split.T < need) {
      throw Error("split of length " + std::to_string(split.T) + " is too short for windows of P=" +
                  std::to_string(cfg.P) + " and horizon " + std::to_string(cfg.horizon()) + " (needs " +
                  std::to_string(need) + ")");
    }
    count_ = split.T - need + 1;
  }

  std::size_t size() const { return count_; }
  const WindowConfig& config() const { return cfg_; }
  const SeriesSplit& split() const { return *split_; }

  /// Writes input w as N x P x F into `dst`.
  void fill_input(std::size_t w, double* dst) const {
    const auto& s = *split_;
    for (std::size_t n = 0; n < s.N; ++n)
      for (std::size_t p = 0; p < cfg_.P; ++p)
        for (std::size_t f = 0; f < s.F; ++f) *dst++ = s.at(n, w + p, f);
  }

  /// Writes target w as N x steps x F into `dst`.
  void fill_target(std::size_t w, double* dst) const {
    const auto& s = *split_;
    for (std::size_t n = 0; n < s.N; ++n) {
      for (std::size_t q = 0; q < cfg_.output_steps(); ++q) {
        const std::size_t t = cfg_.mode == ForecastMode::Multi ? w + cfg_.P + q : w + cfg_.P + cfg_.single_target_offset - 1;
        for (std::size_t f = 0; f < s.F; ++f) *dst++ = s.at(n, t, f);
      }
    }
  }

  std::vector<double> input(std::size_t w) const {
    std::vector<double> v(split_->N * cfg_.P * split_->F);
    fill_input(w, v.data());
    return v;
  }
  std::vector<double> target(std::size_t w) const {
    std::vector<double> v(split_->N * cfg_.output_steps() * split_->F);
    fill_target(w, v.data());
    return v;
  }

  /// Absolute timestamps (relative to the split start) of the targets of window w.
  std::vector<std::size_t> target_times(std::size_t w) const {
    std::vector<std::size_t> out;
    for (std::size_t q = 0; q < cfg_.output_steps(); ++q)
      out.push_back(cfg_.mode == ForecastMode::Multi ? w + cfg_.P + q : w + cfg_.P + cfg_.single_target_offset - 1);
    return out;
  }

 private:
  const SeriesSplit* split_;
  WindowConfig cfg_;
  std::size_t count_ = 0;
};

inline WindowSet windowize(const SeriesSplit& split, const WindowConfig& cfg) { return WindowSet(split, cfg); }

}  // namespace ctsearch

#pragma once

// Command-line surface: flat key=value run configuration (flags > config file >
// profile defaults) and the subcommands that drive data, evaluation, comparator
// training and search.

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include "ctsearch/search.hpp"

namespace ctsearch::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

struct UsageError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------- settings

struct Setting {
  std::string value;
  std::string source;  // "default", "<file>:<line>" or the flag
};

using Settings = std::map<std::string, Setting>;


inline std::map<std::string, std::string> profile_defaults(const std::string& profile) {
  const bool paper = profile == "paper";
  if (!paper && profile != "desk") throw UsageError("unknown profile '" + profile + "' (expected desk or paper)");
  const auto s = paper ? SearchConfig::paper() : SearchConfig::desk();
  auto num = [](auto v) {
    std::ostringstream o;
    o << std::setprecision(17) << v;
    return o.str();
  };
  return {
      {"profile", profile},
      {"out", "run"},
      {"seed", "0"},
      {"workers", "1"},
      {"evaluator", "forecast"},
      // data
      {"data", ""},
      {"adjacency", ""},
      {"synth_N", "8"},
      {"synth_T", "2000"},
      {"synth_seed", "0"},
      {"P", "12"},
      {"Q", paper ? "12" : "3"},
      {"mode", "multi"},
      // forecaster training
      {"full_epochs", num(s.full_epochs)},
      {"proxy_epochs", num(s.proxy_epochs)},
      {"batch_size", "64"},
      {"lr", "0.001"},
      {"weight_decay", "0.0001"},
      {"patience", "0"},
      {"max_train_windows", paper ? "0" : "256"},
      {"eval_stride", paper ? "1" : "4"},
      // synthetic oracle evaluator
      {"oracle_seed", "0"},
      {"oracle_noise", "0.5"},
      {"oracle_shift", "0"},
      // search
      {"L1", num(s.L1)},
      {"L2", num(s.L2)},
      {"z1", num(s.z1)},
      {"z2", num(s.z2)},
      {"K_s", num(s.K_s)},
      {"k_p", num(s.k_p)},
      {"p1", num(s.p1)},
      {"p2", num(s.p2)},
      {"evolution_steps", num(s.evolution_steps)},
      {"K", num(s.K)},
      {"transfer_epochs", num(s.transfer_epochs)},
      // comparator
      {"ahc_layers", num(s.comparator.layers)},
      {"ahc_hidden", num(s.comparator.hidden)},
      {"ahc_lr", num(s.ahc.lr)},
      {"ahc_weight_decay", num(s.ahc.weight_decay)},
      {"ahc_batch", num(s.ahc.batch_size)},
      {"ahc_warmup", num(s.ahc.warmup_epochs)},
      {"ahc_finetune", num(s.ahc.finetune_max_epochs)},
      {"ahc_patience", num(s.ahc.patience)},
      {"ahc_holdout", num(s.ahc.holdout_fraction)},
      {"ahc_max_pairs", num(s.ahc.max_pairs_per_epoch)},
      // subcommand inputs
      {"channel", "noisy"},
      {"count", ""},
      {"from", ""},
      {"transfer_from", ""},
      {"ah", ""},
      {"candidates", "12"},
  };
}

/// Parses `key = value` lines; `#` starts a comment. A key repeated with a
/// different value is a conflict naming both lines.
inline std::vector<std::pair<std::string, Setting>> parse_config_text(std::istream& in, const std::string& name) {
  std::vector<std::pair<std::string, Setting>> out;
  std::map<std::string, std::size_t> where;
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(name + ":" + std::to_string(no) + ": expected key = value");
    const auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(name + ":" + std::to_string(no) + ": empty key");
    const std::string source = name + ":" + std::to_string(no);
    if (const auto it = where.find(key); it != where.end()) {
      const auto& prev = out[it->second].second;
      if (prev.value != value) {
        throw UsageError("conflicting values for '" + key + "': " + prev.source + " sets '" + prev.value + "', " +
                         source + " sets '" + value + "'");
      }
      continue;
    }
    where[key] = out.size();
    out.push_back({key, {value, source}});
  }
  return out;
}

/// Resolved run configuration with typed accessors.
class RunConfig {
 public:
  RunConfig() = default;
  explicit RunConfig(Settings s) : s_(std::move(s)) {}

  const Settings& settings() const { return s_; }
  bool has(const std::string& key) const { return s_.count(key) && !s_.at(key).value.empty(); }
  const std::string& str(const std::string& key) const {
    const auto it = s_.find(key);
    if (it == s_.end()) throw Error("unknown configuration key '" + key + "'");
    return it->second.value;
  }
  long long integer(const std::string& key) const {
    const auto& v = str(key);
    std::size_t pos = 0;
    long long x = 0;
    try {
      x = std::stoll(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (v.empty() || pos != v.size()) throw UsageError(where(key) + ": '" + v + "' is not an integer");
    return x;
  }
  std::size_t count(const std::string& key) const {
    const auto x = integer(key);
    if (x < 0) throw UsageError(where(key) + ": must be non-negative, got " + str(key));
    return static_cast<std::size_t>(x);
  }
  double real(const std::string& key) const {
    const auto& v = str(key);
    std::size_t pos = 0;
    double x = 0;
    try {
      x = std::stod(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (v.empty() || pos != v.size()) throw UsageError(where(key) + ": '" + v + "' is not a number");
    return x;
  }
  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }
  int workers() const {
    const auto w = integer("workers");
    if (w < 1) throw UsageError(where("workers") + ": must be at least 1");
    return static_cast<int>(w);
  }
  std::filesystem::path out() const { return str("out"); }

  std::string where(const std::string& key) const { return "'" + key + "' (from " + s_.at(key).source + ")"; }

  /// Aligned `key = value  # source` listing.
  std::string dump() const {
    std::size_t w = 0;
    for (const auto& [k, v] : s_) w = std::max(w, k.size());
    std::ostringstream o;
    for (const auto& [k, v] : s_) {
      o << std::left << std::setw(static_cast<int>(w)) << k << " = " << v.value;
      if (v.source != "default") o << "  # " << v.source;
      o << "\n";
    }
    return o.str();
  }

 private:
  Settings s_;
};

/// Layers defaults of the selected profile, then the config file, then flags.
/// `flags` pairs a key with the flag spelling that set it.
inline RunConfig resolve_config(const std::vector<std::pair<std::string, Setting>>& flags,
                                const std::optional<std::filesystem::path>& config_file) {
  std::vector<std::pair<std::string, Setting>> file;
  if (config_file) {
    std::ifstream in(*config_file);
    if (!in) throw UsageError("cannot open config file " + config_file->string());
    file = parse_config_text(in, config_file->string());
  }
  std::map<std::string, Setting> flag_map;
  for (const auto& [k, s] : flags) {
    if (const auto it = flag_map.find(k); it != flag_map.end() && it->second.value != s.value) {
      throw UsageError("conflicting values for '" + k + "': " + it->second.source + " sets '" + it->second.value +
                       "', " + s.source + " sets '" + s.value + "'");
    }
    flag_map[k] = s;
  }
  std::string profile = "desk";
  for (const auto& [k, s] : file)
    if (k == "profile") profile = s.value;
  if (flag_map.count("profile")) profile = flag_map["profile"].value;

  Settings s;
  for (auto& [k, v] : profile_defaults(profile)) s[k] = {v, "default"};
  auto apply = [&](const std::string& k, const Setting& v) {
    if (!s.count(k)) throw UsageError("unknown configuration key '" + k + "' (from " + v.source + ")");
    s[k] = v;
  };
  for (const auto& [k, v] : file) apply(k, v);
  for (const auto& [k, v] : flag_map) apply(k, v);
  return RunConfig(std::move(s));
}

// ---------------------------------------------------------------- typed views

inline SearchConfig search_config(const RunConfig& rc) {
  SearchConfig c = rc.str("profile") == "paper" ? SearchConfig::paper() : SearchConfig::desk();
  c.L1 = rc.count("L1");
  c.L2 = rc.count("L2");
  c.z1 = rc.count("z1");
  c.z2 = rc.count("z2");
  c.K_s = rc.count("K_s");
  c.k_p = rc.count("k_p");
  c.p1 = rc.real("p1");
  c.p2 = rc.real("p2");
  c.evolution_steps = static_cast<int>(rc.integer("evolution_steps"));
  c.K = rc.count("K");
  c.proxy_epochs = static_cast<int>(rc.integer("proxy_epochs"));
  c.full_epochs = static_cast<int>(rc.integer("full_epochs"));
  c.transfer_epochs = static_cast<int>(rc.integer("transfer_epochs"));
  c.comparator = {rc.count("ahc_layers"), rc.count("ahc_hidden")};
  c.ahc.lr = rc.real("ahc_lr");
  c.ahc.weight_decay = rc.real("ahc_weight_decay");
  c.ahc.batch_size = rc.count("ahc_batch");
  c.ahc.warmup_epochs = static_cast<int>(rc.integer("ahc_warmup"));
  c.ahc.finetune_max_epochs = static_cast<int>(rc.integer("ahc_finetune"));
  c.ahc.patience = static_cast<int>(rc.integer("ahc_patience"));
  c.ahc.holdout_fraction = rc.real("ahc_holdout");
  c.ahc.max_pairs_per_epoch = rc.count("ahc_max_pairs");
  c.workers = rc.workers();
  c.seed = rc.seed();
  if (c.p1 < 0 || c.p1 > 1 || c.p2 < 0 || c.p2 > 1) throw UsageError("p1 and p2 must lie in [0, 1]");
  if (c.K == 0 || c.k_p == 0 || c.K > c.k_p) throw UsageError("need 0 < K <= k_p");
  return c;
}

inline SyntheticConfig synthetic_config(const RunConfig& rc) {
  SyntheticConfig c;
  c.N = rc.count("synth_N");
  c.T = rc.count("synth_T");
  c.seed = static_cast<std::uint64_t>(rc.integer("synth_seed"));
  return c;
}

inline ForecastEvalConfig forecast_config(const RunConfig& rc) {
  ForecastEvalConfig c;
  c.window.P = rc.count("P");
  c.window.Q = rc.count("Q");
  c.window.mode = parse_forecast_mode(rc.str("mode"));
  c.train.epochs = static_cast<int>(rc.integer("full_epochs"));
  c.train.batch_size = rc.count("batch_size");
  c.train.lr = rc.real("lr");
  c.train.weight_decay = rc.real("weight_decay");
  c.train.patience = static_cast<int>(rc.integer("patience"));
  c.train.max_train_windows = rc.count("max_train_windows");
  c.train.eval_stride = rc.count("eval_stride");
  c.train.seed = rc.seed();
  c.proxy_epochs = static_cast<int>(rc.integer("proxy_epochs"));
  return c;
}

/// The oracle's proxy noise is `oracle_noise` times the score std over 1000
/// shrunk candidates.
inline SyntheticOracleConfig oracle_config(const RunConfig& rc) {
  const auto os = static_cast<std::uint64_t>(rc.integer("oracle_seed"));
  auto o = random_oracle(os);
  if (const double shift = rc.real("oracle_shift"); shift > 0) o = shifted_oracle(o, shift, derive_seed(os, 0x5F));
  Rng rng(derive_seed(os, 7));
  std::vector<ArchHyper> ref;
  for (int i = 0; i < 1000; ++i) ref.push_back(sample_shrunk(rng, o.space));
  o.noise_sigma = rc.real("oracle_noise") * oracle_score_std(o, ref);
  return o;
}

inline CtsDataset load_dataset(const RunConfig& rc) {
  if (rc.has("data")) {
    std::optional<std::filesystem::path> adj;
    if (rc.has("adjacency")) adj = rc.str("adjacency");
    return load_csv(rc.str("data"), adj);
  }
  return generate_synthetic(synthetic_config(rc));
}

inline std::unique_ptr<Evaluator> make_evaluator(const RunConfig& rc) {
  const auto& kind = rc.str("evaluator");
  if (kind == "oracle") {
    return std::make_unique<SyntheticEvaluator>(oracle_config(rc), static_cast<int>(rc.integer("proxy_epochs")),
                                                static_cast<int>(rc.integer("full_epochs")));
  }
  if (kind != "forecast") throw UsageError(rc.where("evaluator") + ": expected forecast or oracle, got '" + kind + "'");
  const auto cfg = forecast_config(rc);
  const auto ds = load_dataset(rc);
  auto data = std::make_shared<const SplitData>(
      split_and_normalize(ds, ds.ratio, cfg.window.P + cfg.window.horizon()));
  return std::make_unique<ForecastEvaluator>(std::move(data), cfg);
}

// ---------------------------------------------------------------- output helpers

/// Plain-text table with left-aligned columns.
inline std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) w[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < w.size(); ++c) w[c] = std::max(w[c], r[c].size());
  std::ostringstream o;
  auto line = [&](const std::vector<std::string>& r) {
    std::string s;
    for (std::size_t c = 0; c < w.size(); ++c) {
      const std::string cell = c < r.size() ? r[c] : "";
      s += cell;
      if (c + 1 < w.size()) s += std::string(w[c] - cell.size() + 2, ' ');
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    o << s << "\n";
  };
  line(header);
  std::vector<std::string> rule;
  for (auto x : w) rule.push_back(std::string(x, '-'));
  line(rule);
  for (const auto& r : rows) line(r);
  return o.str();
}

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(precision) << v;
  return o.str();
}

struct Context {
  RunConfig rc;
  std::ostream& out;
  std::string command;

  std::filesystem::path dir() const { return rc.out(); }

  void summary(const std::string& text) const {
    out << text;
    write_text(dir() / (command + "_summary.txt"), text);
  }
};

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------- commands

inline int cmd_synth_data(const Context& cx) {
  const auto sc = synthetic_config(cx.rc);
  const auto parts = synthesize(sc);
  const auto d = cx.dir() / "data";
  std::filesystem::create_directories(d);
  save_csv(parts.dataset, d / "synthetic.csv", d / "adjacency.csv");
  write_json(d / "synthetic.json", to_json(sc));
  cx.summary(format_table({"N", "T", "F", "seed", "values", "adjacency"},
                          {{std::to_string(sc.N), std::to_string(sc.T), std::to_string(sc.F), std::to_string(sc.seed),
                            "data/synthetic.csv", "data/adjacency.csv"}}));
  return kOk;
}

inline std::string bank_row_name(const std::string& name) { return "banks/" + name + "_bank.jsonl"; }

inline std::vector<std::string> bank_row(const std::string& name, const BankResult& b) {
  return {name,
          std::to_string(b.records.size()),
          std::to_string(b.fresh),
          std::to_string(b.reused),
          std::to_string(b.failures),
          std::to_string(b.samples.size()),
          bank_row_name(name)};
}

inline const std::vector<std::string> kBankHeader{"bank", "candidates", "evaluated", "reused", "failures", "samples", "file"};

inline int cmd_gen_samples(const Context& cx) {
  const auto& ch = cx.rc.str("channel");
  if (ch != "noisy" && ch != "clean") throw UsageError(cx.rc.where("channel") + ": expected noisy or clean");
  const auto scfg = search_config(cx.rc);
  const std::size_t count = cx.rc.has("count") ? cx.rc.count("count") : ch == "noisy" ? scfg.L1 : scfg.L2;
  const auto ev = make_evaluator(cx.rc);
  const auto b = build_bank(*ev, {}, ch == "noisy" ? Channel::Proxy : Channel::Full, count, cx.rc.seed(),
                            cx.dir() / "banks", ch, cx.rc.workers());
  cx.summary(format_table(kBankHeader, {bank_row(ch, b)}));
  return kOk;
}

/// Oracle-only quality report: accuracy and rank correlation on 50 fresh candidates.
inline std::optional<std::pair<double, double>> oracle_quality(const RunConfig& rc, const ComparatorModel& m) {
  if (rc.str("evaluator") != "oracle") return std::nullopt;
  const auto o = oracle_config(rc);
  Rng rng(derive_seed(rc.seed(), 0xF2E5));
  std::set<std::string> seen;
  const auto cands = sample_distinct_shrunk(50, rng, {}, seen);
  std::vector<double> truth;
  for (const auto& ah : cands) truth.push_back(oracle_true_score(ah, o));
  const auto r = rank_candidates(m, cands);
  std::vector<double> pred(cands.size());
  for (std::size_t i = 0; i < r.order.size(); ++i) pred[r.order[i]] = static_cast<double>(i);
  return std::pair{pairwise_accuracy(m, cands, truth), spearman_rho(pred, truth)};
}

inline int train_or_transfer(const Context& cx, const ComparatorModel* pretrained) {
  const auto scfg = search_config(cx.rc);
  const auto ev = make_evaluator(cx.rc);
  const auto n_noisy = pretrained ? scfg.z1 : scfg.L1, n_clean = pretrained ? scfg.z2 : scfg.L2;
  const auto banks =
      build_sample_banks(*ev, {}, n_noisy, n_clean, cx.rc.seed(), cx.dir() / "banks", cx.rc.workers());
  auto ahc = scfg.ahc;
  ahc.seed = derive_seed(scfg.seed, 0xA4C);
  AhcTrainHistory h;
  ComparatorModel m = pretrained
                          ? transfer_finetune(*pretrained, banks.noisy.samples, banks.clean.samples,
                                              scfg.transfer_epochs, ahc, &h)
                          : ComparatorModel(scfg.comparator, {}, derive_seed(scfg.seed, 0xC0DE));
  if (!pretrained) h = train_denoising(m, banks.noisy.samples, banks.clean.samples, ahc);
  m.save(cx.dir() / "ahc");
  Json report{{"history", history_json(h)},
              {"checkpoint", "ahc"},
              {"banks", {{"noisy", bank_row_name("noisy")}, {"clean", bank_row_name("clean")}}}};
  std::string text = format_table(kBankHeader, {bank_row("noisy", banks.noisy), bank_row("clean", banks.clean)});
  std::vector<std::vector<std::string>> rows{
      {"warmup epochs", std::to_string(h.warmup_epochs_run)},
      {"finetune epochs", std::to_string(h.finetune_epochs_run)},
      {"final holdout loss", h.holdout_loss.empty() ? "-" : fmt(h.holdout_loss.back())}};
  if (const auto q = oracle_quality(cx.rc, m)) {
    report["oracle_pairwise_accuracy"] = q->first;
    report["oracle_spearman"] = q->second;
    rows.push_back({"oracle pairwise accuracy", fmt(q->first)});
    rows.push_back({"oracle spearman", fmt(q->second)});
  }
  write_json(cx.dir() / (cx.command + ".json"), report);
  cx.summary(text + "\n" + format_table({"comparator", "value"}, rows));
  return kOk;
}

inline std::vector<std::string> record_row(std::size_t rank, const ScoreRecord& r) {
  return {std::to_string(rank),
          fmt(r.score),
          r.test_score ? fmt(*r.test_score) : "-",
          r.parameter_count ? std::to_string(*r.parameter_count) : "-",
          describe(r.ah)};
}

inline int cmd_search(const Context& cx) {
  const auto scfg = search_config(cx.rc);
  const auto ev = make_evaluator(cx.rc);
  std::optional<ComparatorModel> pre;
  SearchOptions opt;
  opt.out_dir = cx.dir();
  if (cx.rc.has("transfer_from")) {
    pre = ComparatorModel::load(cx.rc.str("transfer_from"));
    opt.pretrained = &*pre;
  }
  const auto r = run_search(*ev, scfg, opt);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < r.finalists.size(); ++i) rows.push_back(record_row(i + 1, r.finalists[i]));
  std::string text = format_table({"rank", "val_error", "test", "params", "candidate"}, rows);
  text += "\n" + format_table({"budget", "count"},
                              {{"proxy evaluations", std::to_string(r.budget.proxy_evals)},
                               {"full evaluations", std::to_string(r.budget.full_evals)},
                               {"comparator calls", std::to_string(r.budget.comparator_calls)}});
  cx.summary(text);
  return kOk;
}

inline ArchHyper read_arch_hyper(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  if (j.contains("best")) j = j.at("best");
  if (j.contains("ah")) j = j.at("ah");
  auto ah = arch_hyper_from_json(j);
  validate(ah);
  return ah;
}

inline int cmd_eval_arch(const Context& cx) {
  if (!cx.rc.has("ah")) throw UsageError("eval-arch needs --ah FILE");
  const auto ah = read_arch_hyper(cx.rc.str("ah"));
  const auto ev = make_evaluator(cx.rc);
  Json report;
  std::vector<std::vector<std::string>> rows;
  if (const auto* fe = dynamic_cast<const ForecastEvaluator*>(ev.get())) {
    const auto r = fe->full_result(ah);
    const double baseline = mean_predictor_error(fe->data(), WindowSet(fe->data().val, fe->config().window),
                                                 fe->config().train.eval_stride);
    report = to_json(r);
    report["mean_predictor_val_error"] = baseline;
    rows.push_back({"val error", fmt(r.val_error)});
    rows.push_back({"mean-predictor val error", fmt(baseline)});
    const Json metrics = to_json(r.test_metrics);
    for (const auto& [k, v] : metrics.items()) rows.push_back({"test " + k, fmt(v.get<double>())});
    rows.push_back({"parameters", std::to_string(r.parameter_count)});
  } else {
    const auto r = ev->full(ah);
    report = to_json(r);
    rows.push_back({"full score", fmt(r.score)});
  }
  write_json(cx.dir() / "eval_arch.json", report);
  cx.summary(describe(ah) + "\n" + format_table({"metric", "value"}, rows));
  return kOk;
}

struct BenchRow {
  ArchHyper ah;
  double proxy = 0, full = 0;
};

/// Scores `m` distinct shrunk candidates on both channels. Finished candidates
/// are appended to `scores_path`, so a rerun trains only the missing ones.
inline std::vector<BenchRow> proxy_benchmark(const Evaluator& ev, std::size_t m, std::uint64_t seed, int workers,
                                             const std::filesystem::path& scores_path = {}) {
  Rng rng(derive_seed(seed, 0xBE1C));
  std::set<std::string> seen;
  const auto cands = sample_distinct_shrunk(m, rng, {}, seen);
  std::map<std::string, BenchRow> stored;
  if (!scores_path.empty()) {
    const auto lines = read_jsonl(scores_path);
    for (const auto& j : lines) {
      auto ah = arch_hyper_from_json(j.at("ah"));
      stored[candidate_key(ah)] = {ah, j.at("proxy").get<double>(), j.at("full").get<double>()};
    }
    if (std::filesystem::exists(scores_path)) write_jsonl(scores_path, lines);
  }
  std::vector<BenchRow> rows(m);
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < m; ++i) {
    if (const auto it = stored.find(candidate_key(cands[i])); it != stored.end()) rows[i] = it->second;
    else todo.push_back(i);
  }
  std::vector<ArchHyper> todo_cands;
  for (auto i : todo) todo_cands.push_back(cands[i]);
  std::mutex mu;
  std::vector<std::exception_ptr> errors(todo.size());
  const auto w = static_cast<std::size_t>(std::clamp(workers, 1, 64));
  auto run = [&](std::size_t t) {
    try {
      const auto [p, f] = ev.proxy_and_full(todo_cands[t]);
      rows[todo[t]] = {todo_cands[t], p.score, f.score};
      if (!scores_path.empty()) {
        std::lock_guard<std::mutex> lock(mu);
        append_jsonl(scores_path, Json{{"ah", to_json(todo_cands[t])}, {"proxy", p.score}, {"full", f.score}});
      }
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < std::min(w, todo.size()); ++k) {
    pool.emplace_back([&, k] {
      for (std::size_t t = k; t < todo.size(); t += w) run(t);
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

inline int cmd_bench_proxy(const Context& cx) {
  const auto m = cx.rc.count("candidates");
  if (m < 2) throw UsageError(cx.rc.where("candidates") + ": need at least 2 candidates");
  const auto ev = make_evaluator(cx.rc);
  const auto rows = proxy_benchmark(*ev, m, cx.rc.seed(), cx.rc.workers(), cx.dir() / "bench_scores.jsonl");
  std::vector<double> proxy, full;
  Json cands = Json::array();
  std::vector<std::vector<std::string>> table;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    proxy.push_back(rows[i].proxy);
    full.push_back(rows[i].full);
    cands.push_back({{"ah", to_json(rows[i].ah)}, {"proxy", rows[i].proxy}, {"full", rows[i].full}});
    table.push_back({std::to_string(i), fmt(rows[i].proxy), fmt(rows[i].full), describe(rows[i].ah)});
  }
  const double pra = pairwise_ranking_accuracy(proxy, full), rho = spearman_rho(proxy, full);
  write_json(cx.dir() / "bench_proxy.json", Json{{"proxy_epochs", cx.rc.integer("proxy_epochs")},
                                                 {"full_epochs", cx.rc.integer("full_epochs")},
                                                 {"candidates", cands},
                                                 {"pra", pra},
                                                 {"spearman", rho}});
  cx.summary(format_table({"#", "proxy", "full", "candidate"}, table) + "\n" +
             format_table({"metric", "value"}, {{"PRA", fmt(pra)}, {"Spearman rho", fmt(rho)}}));
  return kOk;
}

// ---------------------------------------------------------------- entry point

struct FlagSpec {
  std::string flag;  // e.g. "--seed"
  std::string key;
  std::string help;
};

inline const std::vector<FlagSpec>& common_flags() {
  static const std::vector<FlagSpec> f{
      {"--out", "out", "output directory"},
      {"--seed", "seed", "run seed"},
      {"--workers", "workers", "parallel evaluation workers"},
      {"--profile", "profile", "default profile: desk or paper"},
      {"--evaluator", "evaluator", "forecast or oracle"},
      {"--data", "data", "dataset CSV (default: generated synthetic dataset)"},
      {"--adjacency", "adjacency", "adjacency CSV for --data"},
  };
  return f;
}

inline std::map<std::string, std::pair<std::string, std::vector<FlagSpec>>> command_table() {
  return {
      {"synth-data", {"write the synthetic seasonal dataset", {}}},
      {"gen-samples",
       {"build a noisy or clean sample bank",
        {{"--channel", "channel", "noisy or clean"}, {"--count", "count", "number of candidates"}}}},
      {"train-ahc", {"train the comparator from scratch (warm-up, then fine-tune)", {}}},
      {"transfer-ahc",
       {"fine-tune a pretrained comparator on small banks", {{"--from", "from", "pretrained checkpoint base path"}}}},
      {"search", {"run the full search", {{"--transfer-from", "transfer_from", "pretrained checkpoint base path"}}}},
      {"eval-arch",
       {"fully train one candidate",
        {{"--ah", "ah", "JSON file holding a candidate, a score record or a manifest"},
         {"--epochs", "full_epochs", "training epochs"}}}},
      {"bench-proxy",
       {"compare k-epoch proxy scores with full scores",
        {{"--k", "proxy_epochs", "proxy epochs"},
         {"--full-epochs", "full_epochs", "full training epochs"},
         {"--candidates", "candidates", "number of candidates"}}}},
  };
}

inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"Joint architecture and hyperparameter search for correlated time series forecasting", "ctsearch"};
  app.require_subcommand(1);
  app.fallthrough(false);
  const auto table = command_table();
  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, std::vector<std::string>> sets;
  std::map<std::string, std::string> config_files;
  std::map<std::string, std::vector<std::pair<CLI::Option*, FlagSpec>>> opts;
  for (const auto& [name, spec] : table) {
    auto* sub = app.add_subcommand(name, spec.first);
    auto flags = common_flags();
    flags.insert(flags.end(), spec.second.begin(), spec.second.end());
    for (const auto& f : flags) {
      auto* o = sub->add_option(f.flag, values[name][f.flag], f.help);
      opts[name].push_back({o, f});
    }
    sub->add_option("--config", config_files[name], "flat key = value config file");
    sub->add_option("--set", sets[name], "override any configuration key: KEY=VALUE")->take_all();
  }

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto* failed = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << failed->help();
    return kUsage;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    std::vector<std::pair<std::string, Setting>> flags;
    for (const auto& [o, f] : opts[name])
      if (o->count()) flags.push_back({f.key, {values[name][f.flag], f.flag}});
    for (const auto& kv : sets[name]) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--set expects KEY=VALUE, got '" + kv + "'");
      flags.push_back({kv.substr(0, eq), {kv.substr(eq + 1), "--set " + kv.substr(0, eq)}});
    }
    std::optional<std::filesystem::path> cfg_file;
    if (!config_files[name].empty()) cfg_file = config_files[name];
    Context cx{resolve_config(flags, cfg_file), out, name};

    std::filesystem::create_directories(cx.dir());
    write_text(cx.dir() / ("config." + name + ".txt"), cx.rc.dump());
    out << "# effective configuration (" << (cx.dir() / ("config." + name + ".txt")).string() << ")\n";

    if (name == "synth-data") return cmd_synth_data(cx);
    if (name == "gen-samples") return cmd_gen_samples(cx);
    if (name == "train-ahc") return train_or_transfer(cx, nullptr);
    if (name == "transfer-ahc") {
      if (!cx.rc.has("from")) throw UsageError("transfer-ahc needs --from CHECKPOINT");
      const auto pre = ComparatorModel::load(cx.rc.str("from"));
      return train_or_transfer(cx, &pre);
    }
    if (name == "search") return cmd_search(cx);
    if (name == "eval-arch") return cmd_eval_arch(cx);
    if (name == "bench-proxy") return cmd_bench_proxy(cx);
    throw UsageError("unknown subcommand " + name);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << sub->help();
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

inline int run_command(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run_command(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace ctsearch::cli

#pragma once

// End-to-end search: sample banks, comparator training or transfer, space
// shrinking, comparator-ranked evolution, and full training of the finalists.

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "ctsearch/ahc.hpp"
#include "ctsearch/evaluator.hpp"

namespace ctsearch {

struct SearchConfig {
  std::size_t L1 = 2000, L2 = 150;  // pretraining bank sizes (noisy, clean)
  std::size_t z1 = 100, z2 = 5;     // transfer bank sizes
  std::size_t K_s = 200;            // initial ranking sample
  std::size_t k_p = 10;             // population size
  double p1 = 0.8, p2 = 0.2;        // crossover / mutation probability
  int evolution_steps = 20;
  std::size_t K = 3;  // finalists
  int proxy_epochs = 5;
  int full_epochs = 100;
  int transfer_epochs = 3;
  ComparatorConfig comparator{4, 128};
  AhcTrainConfig ahc;
  int workers = 1;
  std::uint64_t seed = 0;

  static SearchConfig paper() { return {}; }

  static SearchConfig desk() {
    SearchConfig c;
    c.L1 = 200;
    c.L2 = 20;
    c.z1 = 20;
    c.z2 = 3;
    c.K_s = 50;
    c.evolution_steps = 10;
    c.proxy_epochs = 3;
    c.full_epochs = 30;
    c.comparator = {4, 32};
    c.ahc.max_pairs_per_epoch = 4000;
    return c;
  }
};

inline Json to_json(const AhcTrainConfig& c) {
  return Json{{"warmup_epochs", c.warmup_epochs}, {"finetune_max_epochs", c.finetune_max_epochs},
              {"patience", c.patience},           {"batch_size", c.batch_size},
              {"lr", c.lr},                       {"weight_decay", c.weight_decay},
              {"holdout_fraction", c.holdout_fraction}, {"max_pairs_per_epoch", c.max_pairs_per_epoch},
              {"seed", c.seed}};
}

inline void update_from_json(AhcTrainConfig& c, const Json& j) {
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.finetune_max_epochs = j.value("finetune_max_epochs", c.finetune_max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  c.max_pairs_per_epoch = j.value("max_pairs_per_epoch", c.max_pairs_per_epoch);
  c.seed = j.value("seed", c.seed);
}

inline Json to_json(const SearchConfig& c) {
  return Json{{"L1", c.L1},
              {"L2", c.L2},
              {"z1", c.z1},
              {"z2", c.z2},
              {"K_s", c.K_s},
              {"k_p", c.k_p},
              {"p1", c.p1},
              {"p2", c.p2},
              {"evolution_steps", c.evolution_steps},
              {"K", c.K},
              {"proxy_epochs", c.proxy_epochs},
              {"full_epochs", c.full_epochs},
              {"transfer_epochs", c.transfer_epochs},
              {"comparator", {{"L", c.comparator.layers}, {"D", c.comparator.hidden}}},
              {"ahc", to_json(c.ahc)},
              {"workers", c.workers},
              {"seed", c.seed}};
}

inline void update_from_json(SearchConfig& c, const Json& j) {
  c.L1 = j.value("L1", c.L1);
  c.L2 = j.value("L2", c.L2);
  c.z1 = j.value("z1", c.z1);
  c.z2 = j.value("z2", c.z2);
  c.K_s = j.value("K_s", c.K_s);
  c.k_p = j.value("k_p", c.k_p);
  c.p1 = j.value("p1", c.p1);
  c.p2 = j.value("p2", c.p2);
  c.evolution_steps = j.value("evolution_steps", c.evolution_steps);
  c.K = j.value("K", c.K);
  c.proxy_epochs = j.value("proxy_epochs", c.proxy_epochs);
  c.full_epochs = j.value("full_epochs", c.full_epochs);
  c.transfer_epochs = j.value("transfer_epochs", c.transfer_epochs);
  if (j.contains("comparator")) {
    c.comparator.layers = j["comparator"].value("L", c.comparator.layers);
    c.comparator.hidden = j["comparator"].value("D", c.comparator.hidden);
  }
  if (j.contains("ahc")) update_from_json(c.ahc, j.at("ahc"));
  c.workers = j.value("workers", c.workers);
  c.seed = j.value("seed", c.seed);
}

// ---------------------------------------------------------------- shrinking

inline constexpr int kMaxShrinkRejections = 1000;

/// Rejection-samples a candidate holding at least one spatial and one temporal operator.
inline ArchHyper sample_shrunk(Rng& rng, const SpaceConfig& space = {}) {
  for (int i = 0; i < kMaxShrinkRejections; ++i) {
    auto ah = sample_arch_hyper(rng, space);
    if (contains_spatial_and_temporal(ah)) return ah;
  }
  throw Error("shrink: " + std::to_string(kMaxShrinkRejections) +
              " consecutive samples lacked a spatial or a temporal operator");
}

/// Draws `n` distinct shrunk candidates not already in `seen` (which is updated).
inline std::vector<ArchHyper> sample_distinct_shrunk(std::size_t n, Rng& rng, const SpaceConfig& space,
                                                     std::set<std::string>& seen) {
  std::vector<ArchHyper> out;
  std::size_t misses = 0;
  while (out.size() < n) {
    auto ah = sample_shrunk(rng, space);
    if (seen.insert(candidate_key(ah)).second) {
      out.push_back(std::move(ah));
      misses = 0;
    } else if (++misses > 100000) {
      throw Error("shrunk space has fewer than " + std::to_string(n + seen.size() - out.size()) +
                  " distinct candidates");
    }
  }
  return out;
}

// ---------------------------------------------------------------- sample banks

inline constexpr int kMaxEvalRetries = 3;

struct BankResult {
  std::vector<ScoreRecord> records;  // successful evaluations in slot order
  std::vector<ComparisonSample> samples;
  std::size_t evaluations = 0;  // total evaluations the bank accounts for, failures included
  std::size_t fresh = 0;        // evaluations performed by this call
  std::size_t reused = 0;       // evaluations loaded from an existing score file
  std::size_t failures = 0;
};

struct SampleBanks {
  BankResult noisy, clean;
};

namespace detail {

struct SlotResult {
  std::size_t slot = 0;
  int attempt = 0;
  std::string key;
  std::optional<ScoreRecord> record;
  std::string error;
};

inline Json to_json(const SlotResult& r) {
  Json j{{"slot", r.slot}, {"attempt", r.attempt}, {"key", r.key}};
  if (r.record) j["record"] = ctsearch::to_json(*r.record);
  else j["error"] = r.error;
  return j;
}

inline SlotResult slot_result_from_json(const Json& j) {
  SlotResult r;
  r.slot = j.at("slot").get<std::size_t>();
  r.attempt = j.at("attempt").get<int>();
  r.key = j.at("key").get<std::string>();
  if (j.contains("record")) r.record = score_record_from_json(j.at("record"));
  else r.error = j.at("error").get<std::string>();
  return r;
}

// Evaluates `todo` on `channel`; each finished item is handed to `done` under a lock.
inline void evaluate_slots(const Evaluator& ev, Channel channel, std::vector<SlotResult>& todo,
                           const std::vector<ArchHyper>& cands, int workers,
                           const std::function<void(const SlotResult&)>& done) {
  std::mutex mu;
  auto run = [&](std::size_t i) {
    auto& t = todo[i];
    try {
      t.record = ev.evaluate(cands[i], channel);
    } catch (const std::exception& e) {
      t.error = e.what();
    }
    std::lock_guard<std::mutex> lock(mu);
    done(t);
  };
  const auto w = static_cast<std::size_t>(std::clamp(workers, 1, 64));
  if (w == 1 || todo.size() < 2) {
    for (std::size_t i = 0; i < todo.size(); ++i) run(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < todo.size(); i += w) run(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Scores `count` distinct shrunk candidates on `channel` and pairs them. With
/// a non-empty `dir`, every evaluation is appended to `<dir>/<name>_scores.jsonl`
/// as it finishes, so an interrupted run resumes without re-evaluating; the
/// pairs are written to `<dir>/<name>_bank.jsonl`. A failed evaluation is
/// recorded and its slot resampled, at most kMaxEvalRetries times.
inline BankResult build_bank(const Evaluator& ev, const SpaceConfig& space, Channel channel, std::size_t count,
                             std::uint64_t seed, const std::filesystem::path& dir = {}, const std::string& name = {},
                             int workers = 1) {
  if (count < 2) throw Error("a sample bank needs at least 2 candidates, got " + std::to_string(count));
  const std::string label = name.empty() ? (channel == Channel::Proxy ? "noisy" : "clean") : name;
  const std::uint64_t stream = fnv1a(label);
  Rng rng(derive_seed(seed, stream));
  std::set<std::string> seen;
  std::vector<ArchHyper> current = sample_distinct_shrunk(count, rng, space, seen);
  std::vector<int> attempt(count, 0);

  std::filesystem::path scores_path;
  std::map<std::pair<std::size_t, int>, detail::SlotResult> stored;
  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    scores_path = dir / (label + "_scores.jsonl");
    const auto rows = read_jsonl(scores_path);
    for (const auto& j : rows) {
      auto r = detail::slot_result_from_json(j);
      stored[{r.slot, r.attempt}] = std::move(r);
    }
    // Drops a line cut short by an interrupted write before appending to it.
    if (std::filesystem::exists(scores_path)) write_jsonl(scores_path, rows);
  }

  BankResult out;
  std::vector<std::optional<ScoreRecord>> done(count);
  std::vector<detail::SlotResult> log;
  std::vector<std::size_t> pending(count);
  std::iota(pending.begin(), pending.end(), std::size_t{0});
  while (!pending.empty()) {
    std::vector<detail::SlotResult> todo;
    std::vector<ArchHyper> todo_cands;
    std::vector<std::size_t> next;
    for (auto slot : pending) {
      const auto key = candidate_key(current[slot]);
      const auto it = stored.find({slot, attempt[slot]});
      if (it != stored.end()) {
        if (it->second.key != key) {
          throw Error(scores_path.string() + " was written with a different seed or search space (slot " +
                      std::to_string(slot) + ")");
        }
        ++out.reused;
        log.push_back(it->second);
        if (it->second.record) done[slot] = it->second.record;
        else next.push_back(slot);
        continue;
      }
      todo.push_back({slot, attempt[slot], key, std::nullopt, {}});
      todo_cands.push_back(current[slot]);
    }
    detail::evaluate_slots(ev, channel, todo, todo_cands, workers, [&](const detail::SlotResult& r) {
      if (!scores_path.empty()) append_jsonl(scores_path, detail::to_json(r));
    });
    for (auto& r : todo) {
      ++out.fresh;
      log.push_back(r);
      if (r.record) done[r.slot] = r.record;
      else next.push_back(r.slot);
    }
    std::sort(next.begin(), next.end());
    for (auto slot : next) {
      if (++attempt[slot] > kMaxEvalRetries) {
        throw Error("evaluation of bank '" + label + "' slot " + std::to_string(slot) + " failed " +
                    std::to_string(kMaxEvalRetries + 1) + " times; last candidate " + describe(current[slot]));
      }
      Rng retry(derive_seed(seed, stream + 1, slot * 16 + static_cast<std::size_t>(attempt[slot])));
      current[slot] = sample_distinct_shrunk(1, retry, space, seen).front();
    }
    pending = std::move(next);
  }

  std::sort(log.begin(), log.end(), [](const auto& a, const auto& b) {
    return std::pair(a.slot, a.attempt) < std::pair(b.slot, b.attempt);
  });
  out.evaluations = log.size();
  for (const auto& r : log) out.failures += !r.record;
  for (auto& r : done) out.records.push_back(*r);
  out.samples = make_pairs(out.records, derive_seed(seed, stream, 0x9A1));
  if (!dir.empty()) {
    std::vector<Json> rows;
    for (const auto& r : log) rows.push_back(detail::to_json(r));
    write_jsonl(scores_path, rows);
    write_sample_bank(dir / (label + "_bank.jsonl"), out.samples);
  }
  return out;
}

inline SampleBanks build_sample_banks(const Evaluator& ev, const SpaceConfig& space, std::size_t L1, std::size_t L2,
                                      std::uint64_t seed, const std::filesystem::path& dir = {}, int workers = 1) {
  return {build_bank(ev, space, Channel::Proxy, L1, seed, dir, "noisy", workers),
          build_bank(ev, space, Channel::Full, L2, seed, dir, "clean", workers)};
}

// ---------------------------------------------------------------- evolution

/// Ranks a candidate list, best first.
using Ranker = std::function<Ranking(std::span<const ArchHyper>)>;

inline Ranker comparator_ranker(const ComparatorModel& m) {
  return [&m](std::span<const ArchHyper> c) { return rank_candidates(m, c); };
}

/// Ranker realizing the exact order of a score function (lower is better).
inline Ranker score_ranker(std::function<double(const ArchHyper&)> score) {
  return [score = std::move(score)](std::span<const ArchHyper> c) {
    std::vector<double> s;
    for (const auto& ah : c) s.push_back(score(ah));
    return rank_by_comparisons(c.size(), [&](std::size_t i, std::size_t j) {
      const bool better = s[i] <= s[j];
      return Comparison{better ? 1.0 : 0.0, better};
    });
  };
}

struct PopulationSnapshot {
  int step = 0;
  std::vector<ArchHyper> members;  // ranked, best first
  std::vector<int> wins;
};

struct EvolveResult {
  std::vector<ArchHyper> population;  // ranked, best first
  std::vector<PopulationSnapshot> trace;
  std::vector<ArchHyper> materialized;  // every distinct candidate ever ranked
  std::size_t comparator_calls = 0;
};

inline Json to_json(const PopulationSnapshot& s) {
  Json members = Json::array();
  for (const auto& ah : s.members) members.push_back(to_json(ah));
  return Json{{"step", s.step}, {"members", members}, {"wins", s.wins}};
}

/// Initial K_s ranking, then per step one offspring per member (crossover with
/// p1, then mutation with p2, a forced mutation if neither fired), re-ranking
/// of members plus offspring and truncation to k_p.
inline EvolveResult evolve(const Ranker& rank, const SpaceConfig& space, const SearchConfig& cfg, std::uint64_t seed) {
  if (cfg.k_p == 0 || cfg.K_s == 0) throw Error("evolve needs K_s > 0 and k_p > 0");
  Rng rng(derive_seed(seed, 0xE70));
  EvolveResult out;
  std::set<std::string> ever;
  auto note = [&](const std::vector<ArchHyper>& cands) {
    for (const auto& ah : cands)
      if (ever.insert(candidate_key(ah)).second) out.materialized.push_back(ah);
  };
  auto rank_and_keep = [&](const std::vector<ArchHyper>& cands, int step) {
    const auto r = rank(cands);
    out.comparator_calls += r.comparator_calls;
    PopulationSnapshot snap{step, {}, {}};
    for (std::size_t i = 0; i < std::min(cfg.k_p, cands.size()); ++i) {
      snap.members.push_back(cands[r.order[i]]);
      snap.wins.push_back(r.wins[r.order[i]]);
    }
    out.population = snap.members;
    out.trace.push_back(std::move(snap));
  };

  std::set<std::string> initial_seen;
  const auto initial = sample_distinct_shrunk(cfg.K_s, rng, space, initial_seen);
  note(initial);
  rank_and_keep(initial, 0);

  std::bernoulli_distribution cross(cfg.p1), mut(cfg.p2);
  for (int step = 1; step <= cfg.evolution_steps; ++step) {
    const auto& pop = out.population;
    std::set<std::string> present;
    for (const auto& ah : pop) present.insert(candidate_key(ah));
    std::vector<ArchHyper> combined = pop;
    for (std::size_t i = 0; i < pop.size(); ++i) {
      ArchHyper child = pop[i];
      bool changed = false;
      if (pop.size() > 1 && cross(rng)) {
        std::uniform_int_distribution<std::size_t> pick(0, pop.size() - 2);
        std::size_t j = pick(rng);
        if (j >= i) ++j;
        child = crossover(child, pop[j], rng);
        changed = true;
      }
      if (mut(rng)) {
        child = mutate(child, rng, space);
        changed = true;
      }
      if (!changed) child = mutate(child, rng, space);
      int tries = 0;
      while (!contains_spatial_and_temporal(child) || present.count(candidate_key(child))) {
        if (++tries > kMaxShrinkRejections) {
          throw Error("evolve: could not produce a new shrunk offspring after " +
                      std::to_string(kMaxShrinkRejections) + " mutations");
        }
        child = mutate(child, rng, space);
      }
      present.insert(candidate_key(child));
      combined.push_back(std::move(child));
    }
    note(combined);
    rank_and_keep(combined, step);
  }
  return out;
}

// ---------------------------------------------------------------- run_search

struct SearchBudget {
  std::size_t proxy_evals = 0;
  std::size_t full_evals = 0;
  std::size_t comparator_calls = 0;
};

inline Json to_json(const SearchBudget& b) {
  return Json{{"proxy_evals", b.proxy_evals}, {"full_evals", b.full_evals}, {"comparator_calls", b.comparator_calls}};
}

struct SearchOptions {
  std::filesystem::path out_dir;                // empty: nothing persisted
  const ComparatorModel* pretrained = nullptr;  // transfer branch when set
  std::optional<Ranker> ranker;                 // replaces the learned comparator; skips banks and training
  SpaceConfig space;
};

struct SearchResult {
  ArchHyper best;
  std::vector<ScoreRecord> finalists;  // sorted, best first
  std::vector<PopulationSnapshot> ranking_trace;
  std::vector<ArchHyper> materialized;
  SearchBudget budget;
  std::optional<ComparatorModel> comparator;
  AhcTrainHistory ahc_history;
  Json manifest;
};

/// Orders full-score records: lower score, then fewer parameters, then candidate key.
inline bool finalist_less(const ScoreRecord& a, const ScoreRecord& b) {
  if (a.score != b.score) return a.score < b.score;
  const auto pa = a.parameter_count.value_or(0), pb = b.parameter_count.value_or(0);
  if (pa != pb) return pa < pb;
  return candidate_key(a.ah) < candidate_key(b.ah);
}

inline Json history_json(const AhcTrainHistory& h) {
  return Json{{"train_loss", h.train_loss},
              {"holdout_loss", h.holdout_loss},
              {"warmup_epochs_run", h.warmup_epochs_run},
              {"finetune_epochs_run", h.finetune_epochs_run}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

inline SearchResult run_search(const Evaluator& ev, const SearchConfig& cfg, const SearchOptions& opt = {}) {
  const auto& dir = opt.out_dir;
  const bool persist = !dir.empty();
  const bool transfer = opt.pretrained != nullptr;
  std::string mode = opt.ranker ? "fixed-ranker" : transfer ? "transfer" : "scratch";
  Json manifest{{"config", to_json(cfg)},
                {"evaluator", ev.describe()},
                {"space", to_json(opt.space)},
                {"space_fingerprint", space_fingerprint(opt.space)},
                {"mode", mode}};
  if (persist) {
    std::filesystem::create_directories(dir);
    write_text(dir / "search_config.json", manifest.dump(2) + "\n");
  }

  SearchResult res;
  Ranker ranker;
  if (opt.ranker) {
    ranker = *opt.ranker;
  } else {
    const std::size_t n_noisy = transfer ? cfg.z1 : cfg.L1, n_clean = transfer ? cfg.z2 : cfg.L2;
    const auto bank_dir = persist ? dir / "banks" : std::filesystem::path{};
    const auto banks = build_sample_banks(ev, opt.space, n_noisy, n_clean, cfg.seed, bank_dir, cfg.workers);
    res.budget.proxy_evals = banks.noisy.evaluations;
    res.budget.full_evals = banks.clean.evaluations;
    auto ahc_cfg = cfg.ahc;
    ahc_cfg.seed = derive_seed(cfg.seed, 0xA4C);
    if (transfer) {
      res.comparator = transfer_finetune(*opt.pretrained, banks.noisy.samples, banks.clean.samples,
                                         cfg.transfer_epochs, ahc_cfg, &res.ahc_history);
    } else {
      res.comparator.emplace(cfg.comparator, opt.space, derive_seed(cfg.seed, 0xC0DE));
      res.ahc_history = train_denoising(*res.comparator, banks.noisy.samples, banks.clean.samples, ahc_cfg);
    }
    Json bank_info;
    for (const auto& [name, b] : {std::pair<std::string, const BankResult&>{"noisy", banks.noisy},
                                  std::pair<std::string, const BankResult&>{"clean", banks.clean}}) {
      bank_info[name] = {{"candidates", b.records.size()},
                         {"evaluations", b.evaluations},
                         {"failures", b.failures},
                         {"samples", b.samples.size()}};
      if (persist) {
        bank_info[name]["scores"] = "banks/" + name + "_scores.jsonl";
        bank_info[name]["bank"] = "banks/" + name + "_bank.jsonl";
      }
    }
    manifest["banks"] = bank_info;
    manifest["comparator"] = {{"history", history_json(res.ahc_history)}};
    if (persist) {
      res.comparator->save(dir / "ahc");
      manifest["comparator"]["checkpoint"] = "ahc";
    }
    ranker = comparator_ranker(*res.comparator);
  }

  const auto evo = evolve(ranker, opt.space, cfg, cfg.seed);
  res.ranking_trace = evo.trace;
  res.materialized = evo.materialized;
  res.budget.comparator_calls = evo.comparator_calls;
  Json trace = Json::array();
  for (const auto& s : evo.trace) trace.push_back(to_json(s));
  manifest["evolution"] = trace;
  manifest["materialized_candidates"] = evo.materialized.size();

  const std::vector<ArchHyper> top(evo.population.begin(),
                                   evo.population.begin() + static_cast<std::ptrdiff_t>(std::min(cfg.K, evo.population.size())));
  res.finalists = evaluate_all(ev, top, Channel::Full, cfg.workers);
  res.budget.full_evals += res.finalists.size();
  std::stable_sort(res.finalists.begin(), res.finalists.end(), finalist_less);
  res.best = res.finalists.front().ah;

  Json finalists = Json::array();
  for (const auto& r : res.finalists) finalists.push_back(to_json(r));
  manifest["finalists"] = finalists;
  manifest["best"] = to_json(res.finalists.front());
  manifest["budget"] = to_json(res.budget);
  res.manifest = manifest;
  if (persist) write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return res;
}

}  // namespace ctsearch

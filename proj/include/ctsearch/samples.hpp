#pragma once

// Score records and comparison samples, plus their JSON-lines bank files.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ctsearch/searchspace.hpp"

namespace ctsearch {

enum class Channel { Proxy, Full };
enum class Provenance { Noisy, Clean };

inline std::string to_string(Channel c) { return c == Channel::Proxy ? "proxy" : "full"; }
inline std::string to_string(Provenance p) { return p == Provenance::Noisy ? "noisy" : "clean"; }

inline Channel parse_channel(const std::string& s) {
  if (s == "proxy" || s == "noisy") return Channel::Proxy;
  if (s == "full" || s == "clean") return Channel::Full;
  throw Error("unknown channel '" + s + "' (expected proxy|full)");
}

inline Provenance parse_provenance(const std::string& s) {
  if (s == "noisy") return Provenance::Noisy;
  if (s == "clean") return Provenance::Clean;
  throw Error("unknown provenance '" + s + "' (expected noisy|clean)");
}

/// One evaluated candidate. Scores are errors: lower is better.
struct ScoreRecord {
  ArchHyper ah;
  double score = 0.0;
  Channel channel = Channel::Proxy;
  int cost_epochs = 0;
  std::uint64_t seed = 0;
  std::optional<double> test_score;
  std::optional<std::size_t> parameter_count;
};

/// label == 1 means ah1 scored better-or-equal (lower-or-equal error) than ah2.
struct ComparisonSample {
  ArchHyper ah1;
  ArchHyper ah2;
  int label = 1;
  Provenance provenance = Provenance::Noisy;
};

inline Json to_json(const ScoreRecord& r) {
  Json j{{"ah", to_json(r.ah)},
         {"score", r.score},
         {"channel", to_string(r.channel)},
         {"cost_epochs", r.cost_epochs},
         {"seed", r.seed}};
  if (r.test_score) j["test_score"] = *r.test_score;
  if (r.parameter_count) j["parameter_count"] = *r.parameter_count;
  return j;
}

inline ScoreRecord score_record_from_json(const Json& j) {
  ScoreRecord r;
  r.ah = arch_hyper_from_json(j.at("ah"));
  r.score = j.at("score").get<double>();
  r.channel = parse_channel(j.at("channel").get<std::string>());
  r.cost_epochs = j.at("cost_epochs").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("test_score")) r.test_score = j.at("test_score").get<double>();
  if (j.contains("parameter_count")) r.parameter_count = j.at("parameter_count").get<std::size_t>();
  return r;
}

inline Json to_json(const ComparisonSample& s) {
  return Json{{"ah1", to_json(s.ah1)},
              {"ah2", to_json(s.ah2)},
              {"label", s.label},
              {"provenance", to_string(s.provenance)}};
}

inline ComparisonSample comparison_sample_from_json(const Json& j) {
  ComparisonSample s;
  s.ah1 = arch_hyper_from_json(j.at("ah1"));
  s.ah2 = arch_hyper_from_json(j.at("ah2"));
  s.label = j.at("label").get<int>();
  if (s.label != 0 && s.label != 1) throw Error("label must be 0 or 1, got " + std::to_string(s.label));
  s.provenance = parse_provenance(j.at("provenance").get<std::string>());
  return s;
}

/// Reads a JSON-lines file. A truncated trailing line (interrupted append) is ignored.
inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::vector<Json> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error&) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed JSON line");
    }
  }
  return out;
}

inline void append_jsonl(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot append to " + path.string());
  out << j.dump() << "\n";
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& j : rows) out << j.dump() << "\n";
}

inline std::vector<ComparisonSample> read_sample_bank(const std::filesystem::path& path) {
  std::vector<ComparisonSample> out;
  for (const auto& j : read_jsonl(path)) out.push_back(comparison_sample_from_json(j));
  return out;
}

inline void write_sample_bank(const std::filesystem::path& path, const std::vector<ComparisonSample>& samples) {
  std::vector<Json> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(to_json(s));
  write_jsonl(path, rows);
}

}  // namespace ctsearch

#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autopainter/errors.hpp"

// Like-vs-dislike popularity index over subjective votes.
//   pop_ij = ln((n_like_ij + c) / (n_dislike_ij + c))
//   pop_j  = ln((sum_i n_like_ij + c) / (sum_i n_dislike_ij + c))
// Natural log throughout: ln(250/1148) = -1.524, where log10 would give -0.662.
namespace autopainter {

struct VoteTally {
  std::string image_id;
  std::string algorithm_id;
  std::int64_t n_like = 0;
  std::int64_t n_dislike = 0;

  friend bool operator==(const VoteTally&, const VoteTally&) = default;
};

enum class VarianceKind { kPopulation, kSample };

inline void require_smoothing(double c) {
  if (!(c > 0.0) || !std::isfinite(c)) throw ParameterError("popularity: smoothing constant c must be > 0");
}

inline double pop_image(const VoteTally& tally, double c = 1.0) {
  require_smoothing(c);
  if (tally.n_like < 0 || tally.n_dislike < 0) throw ParameterError("popularity: negative vote count");
  return std::log((double(tally.n_like) + c) / (double(tally.n_dislike) + c));
}

/// Popularity of one algorithm from all its per-image tallies.
inline double pop_algorithm(const std::vector<VoteTally>& tallies, double c = 1.0) {
  require_smoothing(c);
  if (tallies.empty()) throw ParameterError("pop_algorithm: no tallies");
  std::int64_t likes = 0, dislikes = 0;
  for (const VoteTally& t : tallies) {
    if (t.algorithm_id != tallies.front().algorithm_id)
      throw ParameterError("pop_algorithm: mixed algorithm ids '" + tallies.front().algorithm_id + "' and '" +
                           t.algorithm_id + "'");
    if (t.n_like < 0 || t.n_dislike < 0) throw ParameterError("popularity: negative vote count");
    likes += t.n_like;
    dislikes += t.n_dislike;
  }
  return std::log((double(likes) + c) / (double(dislikes) + c));
}

struct AlgorithmStats {
  std::string algorithm_id;
  std::int64_t n_like = 0;
  std::int64_t n_dislike = 0;
  double pop = 0.0;
  double mean_pop_image = 0.0;
  double variance_pop_image = 0.0;
  std::size_t images = 0;
};

struct PopReport {
  double c = 1.0;
  VarianceKind variance_kind = VarianceKind::kPopulation;
  std::vector<AlgorithmStats> algorithms;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json algos = nlohmann::ordered_json::array();
    for (const auto& a : algorithms)
      algos.push_back({{"algorithm", a.algorithm_id},
                       {"n_like", a.n_like},
                       {"n_dislike", a.n_dislike},
                       {"pop", a.pop},
                       {"variance_pop_image", a.variance_pop_image},
                       {"mean_pop_image", a.mean_pop_image},
                       {"images", a.images}});
    return {{"c", c},
            {"variance", variance_kind == VarianceKind::kPopulation ? "population" : "sample"},
            {"algorithms", algos}};
  }

  /// Table with one column per algorithm and rows n_like, n_dislike, pop_j, variance, mean.
  std::string to_table() const {
    std::ostringstream os;
    os << std::fixed;
    auto row = [&](const std::string& label, auto value) {
      os << std::left << std::setw(20) << label;
      for (const auto& a : algorithms) os << std::right << std::setw(14) << value(a);
      os << "\n";
    };
    os << std::left << std::setw(20) << "method";
    for (const auto& a : algorithms) os << std::right << std::setw(14) << a.algorithm_id;
    os << "\n" << std::setprecision(3);
    row("n_like", [](const AlgorithmStats& a) { return std::to_string(a.n_like); });
    row("n_dislike", [](const AlgorithmStats& a) { return std::to_string(a.n_dislike); });
    row("pop_j", [](const AlgorithmStats& a) { return a.pop; });
    row("variance(pop_ij)", [](const AlgorithmStats& a) { return a.variance_pop_image; });
    row("mean(pop_ij)", [](const AlgorithmStats& a) { return a.mean_pop_image; });
    return os.str();
  }
};

/// Sums tallies sharing (image, algorithm). Order-independent: the result is sorted by key.
inline std::vector<VoteTally> merge_tallies(const std::vector<VoteTally>& a, const std::vector<VoteTally>& b = {}) {
  std::map<std::pair<std::string, std::string>, VoteTally> merged;
  for (const auto* list : {&a, &b})
    for (const VoteTally& t : *list) {
      auto& slot = merged[{t.algorithm_id, t.image_id}];
      slot.image_id = t.image_id;
      slot.algorithm_id = t.algorithm_id;
      slot.n_like += t.n_like;
      slot.n_dislike += t.n_dislike;
    }
  std::vector<VoteTally> out;
  for (auto& [key, t] : merged) out.push_back(std::move(t));
  return out;
}

/// Per-algorithm pop_j, mean and variance of pop_ij. With `fill_missing`, every algorithm is
/// evaluated over every observed image, counting absent (image, algorithm) cells as 0/0 votes.
inline PopReport summarize(const std::vector<VoteTally>& tallies, double c = 1.0,
                           VarianceKind variance = VarianceKind::kPopulation, bool fill_missing = true) {
  require_smoothing(c);
  std::vector<VoteTally> merged = merge_tallies(tallies);
  if (fill_missing) {
    std::set<std::string> images, algos;
    for (const auto& t : merged) {
      images.insert(t.image_id);
      algos.insert(t.algorithm_id);
    }
    std::vector<VoteTally> zeros;
    for (const auto& j : algos)
      for (const auto& i : images) zeros.push_back({i, j, 0, 0});
    merged = merge_tallies(merged, zeros);
  }
  std::map<std::string, std::vector<VoteTally>> by_algo;
  for (const auto& t : merged) by_algo[t.algorithm_id].push_back(t);

  PopReport report{c, variance, {}};
  for (const auto& [algo, list] : by_algo) {
    AlgorithmStats s;
    s.algorithm_id = algo;
    s.images = list.size();
    std::vector<double> pops;
    for (const auto& t : list) {
      s.n_like += t.n_like;
      s.n_dislike += t.n_dislike;
      pops.push_back(pop_image(t, c));
    }
    s.pop = pop_algorithm(list, c);
    double mean = 0.0;
    for (double p : pops) mean += p;
    mean /= double(pops.size());
    double ss = 0.0;
    for (double p : pops) ss += (p - mean) * (p - mean);
    const double denom = variance == VarianceKind::kPopulation ? double(pops.size()) : double(pops.size()) - 1.0;
    s.mean_pop_image = mean;
    s.variance_pop_image = denom > 0 ? ss / denom : 0.0;
    report.algorithms.push_back(s);
  }
  return report;
}

struct VoteRecord {
  std::string voter_id;
  std::string image_id;
  std::string best;
  std::string worst;
};

struct IngestResult {
  std::vector<VoteTally> tallies;  // only (image, algorithm) pairs that received a vote
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

/// Each record adds one like to (image, best) and one dislike to (image, worst).
inline IngestResult ingest_votes(const std::vector<VoteRecord>& records) {
  std::vector<VoteTally> raw;
  IngestResult result;
  for (const VoteRecord& r : records) {
    if (r.best == r.worst) {
      ++result.rejected;
      continue;
    }
    raw.push_back({r.image_id, r.best, 1, 0});
    raw.push_back({r.image_id, r.worst, 0, 1});
    ++result.accepted;
  }
  result.tallies = merge_tallies(raw);
  return result;
}

inline std::string vote_field(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  return v.is_string() ? v.get<std::string>() : v.dump();
}

/// Line-delimited JSON: {"voter": .., "image": .., "best": .., "worst": ..}; ids may be strings or numbers.
inline std::vector<VoteRecord> read_vote_records(std::istream& in) {
  std::vector<VoteRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      records.push_back({vote_field(j, "voter"), vote_field(j, "image"), vote_field(j, "best"), vote_field(j, "worst")});
    } catch (const nlohmann::json::exception& e) {
      throw LoadError("vote record line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace autopainter

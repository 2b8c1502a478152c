#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace docrep {

struct ClassScores {
  std::int64_t label = 0;
  double precision = 0, recall = 0, f1 = 0;
  std::int64_t support = 0;
};

/// Support-weighted precision/recall/F1 plus accuracy and per-class rows.
struct WeightedPRF {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  std::vector<ClassScores> per_class;
};

/// Classes are the union of labels seen in either sequence. A class with no
/// predicted members has precision 0.
WeightedPRF weighted_prf(const std::vector<std::int64_t>& y_true, const std::vector<std::int64_t>& y_pred);

/// 1 - cosine similarity; throws on a zero vector.
double cosine_distance(const std::vector<double>& a, const std::vector<double>& b);

struct RetrievalHit {
  std::string id;
  double distance = 0;
};

using IndexEntry = std::pair<std::string, std::vector<double>>;

/// The k nearest index entries by cosine distance, ties by ascending id
/// (k = 0 returns the full ranking).
std::vector<RetrievalHit> retrieve(const std::vector<double>& query, const std::vector<IndexEntry>& index, std::size_t k = 0);

/// Mean precision at the ranks of relevant items; 0 without relevant items.
double average_precision(const std::vector<int>& relevances);
/// DCG@k / ideal DCG@k with binary gains and log2(rank + 1) discounts.
double ndcg_at_k(const std::vector<int>& relevances, int k);

struct RankingMetrics {
  double map = 0;
  std::vector<int> ks;
  std::vector<double> ndcg;
  std::int64_t queries = 0;
  /// Queries dropped because nothing in their ranking was relevant.
  std::int64_t excluded = 0;
};

RankingMetrics map_ndcg(const std::vector<std::vector<int>>& rankings, const std::vector<int>& ks);

/// Serialized as metrics.json.
struct MetricsReport {
  std::string task;
  /// Name and per-family flags of the inference ablation.
  nlohmann::json ablation;
  std::int64_t documents = 0;
  bool has_classification = false;
  WeightedPRF classification;
  bool has_ranking = false;
  RankingMetrics ranking;

  nlohmann::json to_json() const;
};

}  // namespace docrep

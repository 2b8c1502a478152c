#include "docrep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace docrep {

WeightedPRF weighted_prf(const std::vector<std::int64_t>& y_true, const std::vector<std::int64_t>& y_pred) {
  if (y_true.empty()) throw std::invalid_argument("weighted_prf: empty label sequences");
  if (y_true.size() != y_pred.size())
    throw std::invalid_argument("weighted_prf: " + std::to_string(y_true.size()) + " true labels but " +
                                std::to_string(y_pred.size()) + " predictions");
  std::map<std::int64_t, std::int64_t> tp, predicted, support;
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ++support[y_true[i]];
    ++predicted[y_pred[i]];
    predicted.try_emplace(y_true[i], 0);
    support.try_emplace(y_pred[i], 0);
    if (y_true[i] == y_pred[i]) {
      ++tp[y_true[i]];
      ++correct;
    }
  }
  const auto n = static_cast<double>(y_true.size());
  WeightedPRF out;
  out.accuracy = correct / n;
  for (const auto& [label, sup] : support) {
    ClassScores c;
    c.label = label;
    c.support = sup;
    const auto hits = static_cast<double>(tp[label]);
    c.precision = predicted[label] > 0 ? hits / static_cast<double>(predicted[label]) : 0.0;
    c.recall = sup > 0 ? hits / static_cast<double>(sup) : 0.0;
    c.f1 = c.precision + c.recall > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    const double w = static_cast<double>(sup) / n;
    out.precision += w * c.precision;
    out.recall += w * c.recall;
    out.f1 += w * c.f1;
    out.per_class.push_back(c);
  }
  return out;
}

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_distance: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw std::invalid_argument("cosine_distance: zero vector");
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<RetrievalHit> retrieve(const std::vector<double>& query, const std::vector<IndexEntry>& index, std::size_t k) {
  std::vector<RetrievalHit> hits;
  hits.reserve(index.size());
  for (const auto& [id, vec] : index) {
    try {
      hits.push_back({id, cosine_distance(query, vec)});
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string("retrieve: ") + e.what() + " (query or index entry '" + id + "')");
    }
  }
  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  });
  if (k > 0 && hits.size() > k) hits.resize(k);
  return hits;
}

double average_precision(const std::vector<int>& relevances) {
  double sum = 0;
  int found = 0;
  for (std::size_t i = 0; i < relevances.size(); ++i)
    if (relevances[i]) {
      ++found;
      sum += static_cast<double>(found) / static_cast<double>(i + 1);
    }
  return found ? sum / found : 0.0;
}

double ndcg_at_k(const std::vector<int>& relevances, int k) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  auto dcg = [k](const std::vector<int>& rel) {
    double s = 0;
    for (std::size_t i = 0; i < rel.size() && static_cast<int>(i) < k; ++i)
      if (rel[i]) s += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return s;
  };
  auto ideal = relevances;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double best = dcg(ideal);
  return best > 0 ? dcg(relevances) / best : 0.0;
}

RankingMetrics map_ndcg(const std::vector<std::vector<int>>& rankings, const std::vector<int>& ks) {
  RankingMetrics out;
  out.ks = ks;
  out.ndcg.assign(ks.size(), 0.0);
  for (const auto& r : rankings) {
    if (std::none_of(r.begin(), r.end(), [](int x) { return x != 0; })) {
      ++out.excluded;
      continue;
    }
    ++out.queries;
    out.map += average_precision(r);
    for (std::size_t i = 0; i < ks.size(); ++i) out.ndcg[i] += ndcg_at_k(r, ks[i]);
  }
  if (out.queries > 0) {
    out.map /= static_cast<double>(out.queries);
    for (auto& v : out.ndcg) v /= static_cast<double>(out.queries);
  }
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["task"] = task;
  j["ablation"] = ablation;
  j["documents"] = documents;
  if (has_classification) {
    j["accuracy"] = classification.accuracy;
    j["precision"] = classification.precision;
    j["recall"] = classification.recall;
    j["f1"] = classification.f1;
    auto rows = nlohmann::json::array();
    for (const auto& c : classification.per_class)
      rows.push_back({{"label", c.label}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
    j["per_class"] = rows;
  }
  if (has_ranking) {
    j["map"] = ranking.map;
    auto ndcg = nlohmann::json::object();
    for (std::size_t i = 0; i < ranking.ks.size(); ++i) ndcg[std::to_string(ranking.ks[i])] = ranking.ndcg[i];
    j["ndcg"] = ndcg;
    j["queries"] = ranking.queries;
    j["excluded_queries"] = ranking.excluded;
  }
  return j;
}

}  // namespace docrep

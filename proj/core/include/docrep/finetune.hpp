#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "docrep/metrics.hpp"
#include "docrep/trainer.hpp"

namespace docrep {

nlohmann::json ablation_json(const AblationMask& ablation);

struct Classification {
  std::int64_t label = 0;
  std::vector<double> probabilities;
};

template <typename T>
Classification classify_document(const DocumentModel<T>& model, const EncodedDocument& enc, const AblationMask& ablation = {});

struct TokenPrediction {
  std::int64_t position = 0;
  std::int64_t label = 0;
};

/// Predictions at real token positions only (CLS, SEP and padding excluded).
template <typename T>
std::vector<TokenPrediction> label_tokens(const DocumentModel<T>& model, const EncodedDocument& enc,
                                          const AblationMask& ablation = {});

/// CLS hidden state of the last encoder layer.
template <typename T>
std::vector<double> extract_embedding(const DocumentModel<T>& model, const EncodedDocument& enc, const AblationMask& ablation = {});

/// Supervised fine-tuning of the document-class head or the per-token head
/// on top of the shared encoder.
template <typename T>
class Finetuner {
 public:
  Finetuner(DocumentModel<T>& model, const FinetuneConfig& cfg, std::vector<Document> train);
  Finetuner(const Finetuner&) = delete;
  Finetuner& operator=(const Finetuner&) = delete;

  StepRecord step();
  void run(const std::function<void(const StepRecord&)>& on_step = {});
  int completed_steps() const { return step_; }

 private:
  DocumentModel<T>& model_;
  FinetuneConfig cfg_;
  std::vector<Document> train_;
  EpochSampler sampler_;
  AdamW<T> opt_;
  std::vector<TaskRunner<T>> runners_;
  int step_ = 0;
};

template <typename T>
WeightedPRF evaluate_classification(const DocumentModel<T>& model, const std::vector<Document>& docs,
                                    const AblationMask& ablation = {});

/// Word-token level scores over every labeled real token.
template <typename T>
WeightedPRF evaluate_token_labeling(const DocumentModel<T>& model, const std::vector<Document>& docs,
                                    const AblationMask& ablation = {});

struct QueryRanking {
  std::string query_id;
  std::vector<RetrievalHit> hits;
  /// 1 where hits[i] shares the query's category.
  std::vector<int> relevances;
};

struct RetrievalEvaluation {
  RankingMetrics metrics;
  std::vector<QueryRanking> rankings;
};

/// Ranks the whole index for every query; relevance is category equality.
template <typename T>
RetrievalEvaluation evaluate_retrieval(const DocumentModel<T>& model, const std::vector<Document>& queries,
                                       const std::vector<Document>& index, const std::vector<int>& ks,
                                       const AblationMask& ablation = {});

}  // namespace docrep

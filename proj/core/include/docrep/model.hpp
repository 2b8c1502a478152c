#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "docrep/config.hpp"
#include "docrep/corpus.hpp"
#include "docrep/embedder.hpp"
#include "docrep/encoder.hpp"
#include "docrep/parameters.hpp"
#include "docrep/vision.hpp"

namespace docrep {

template <typename T>
struct LinearHead {
  Var<T> weight, bias;
  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
};

/// Backbone + fused embeddings + windowed encoder + all task heads.
template <typename T>
class DocumentModel {
 public:
  DocumentModel(const ModelConfig& cfg, std::uint64_t seed);
  DocumentModel(const DocumentModel&) = delete;
  DocumentModel& operator=(const DocumentModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  const Backbone<T>& backbone() const { return *backbone_; }
  const EmbeddingTables<T>& tables() const { return tables_; }
  const Encoder<T>& encoder() const { return encoder_; }

  /// Feature maps for every retained page of the document, indexed like
  /// enc.pages. Frozen backbone prefixes are cached per page image key.
  std::vector<FeatureMap<T>> page_feature_maps(const EncodedDocument& enc) const;

  Var<T> embed(const EncodedDocument& enc, const std::vector<FeatureMap<T>>& maps, const AblationMask& ablation = {}) const;
  /// Hidden states [S, d].
  Var<T> forward(const EncodedDocument& enc, const AblationMask& ablation = {}, ops::AttentionStats* stats = nullptr) const;

  static Var<T> cls_state(const Var<T>& hidden) { return ops::select_rows(hidden, {0}); }

  const LinearHead<T>& mvlm_head() const { return mvlm_; }
  const LinearHead<T>& clf_head() const { return clf_; }
  const LinearHead<T>& dsp_head() const { return dsp_; }
  const LinearHead<T>& dtm_head() const { return dtm_; }
  const LinearHead<T>& doc_class_head() const { return doc_class_; }
  const LinearHead<T>& token_head() const { return token_; }

  void clear_feature_cache() const;
  std::size_t feature_cache_entries() const;
  /// Byte budget for cached frozen features; 0 disables caching.
  void set_feature_cache_budget(std::size_t bytes) { cache_budget_ = bytes; }

 private:
  ModelConfig cfg_;
  ParameterSet<T> params_;
  std::unique_ptr<Backbone<T>> backbone_;
  EmbeddingTables<T> tables_;
  Encoder<T> encoder_;
  LinearHead<T> mvlm_, clf_, dsp_, dtm_, doc_class_, token_;

  mutable std::mutex cache_mutex_;
  mutable std::unordered_map<std::string, std::shared_ptr<const FrozenFeatures<T>>> cache_;
  mutable std::size_t cache_bytes_ = 0;
  std::size_t cache_budget_ = std::size_t{1} << 30;
};

}  // namespace docrep

#include "docrep/model.hpp"

#include <cmath>

#include "docrep/rng.hpp"

namespace docrep {

template <typename T>
DocumentModel<T>::DocumentModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(derive_seed(seed, {0x30DE1}));
  backbone_ = std::make_unique<Backbone<T>>(cfg.backbone, cfg.page_width, cfg.page_height, params_, rng);
  tables_ = EmbeddingTables<T>(cfg, params_, rng);
  encoder_ = Encoder<T>(cfg.encoder, params_, rng, cfg.init_std);
  const int d = cfg.hidden();
  auto head = [&](const std::string& name, std::int64_t out) {
    LinearHead<T> h;
    h.weight = params_.normal("heads." + name + ".weight", "heads." + name, {d, out}, 1.0 / std::sqrt(d), rng);
    h.bias = params_.zeros("heads." + name + ".bias", "heads." + name, {out});
    return h;
  };
  mvlm_ = head("mvlm", cfg.vocab_size);
  clf_ = head("clf", cfg.num_classes);
  dsp_ = head("dsp", 2);
  dtm_ = head("dtm", cfg.num_topics);
  doc_class_ = head("doc_class", cfg.num_classes);
  token_ = head("token", cfg.num_token_labels);
}

template <typename T>
std::vector<FeatureMap<T>> DocumentModel<T>::page_feature_maps(const EncodedDocument& enc) const {
  std::vector<FeatureMap<T>> maps;
  maps.reserve(enc.pages.size());
  for (const auto& page : enc.pages) {
    std::shared_ptr<const FrozenFeatures<T>> frozen;
    if (cache_budget_ > 0) {
      std::lock_guard lock(cache_mutex_);
      if (auto it = cache_.find(page.key()); it != cache_.end()) frozen = it->second;
    }
    if (!frozen) {
      frozen = std::make_shared<const FrozenFeatures<T>>(backbone_->forward_frozen(raster_to_tensor<T>(page.raster())));
      if (cache_budget_ > 0) {
        std::size_t bytes = frozen->last.data.size() * sizeof(T);
        for (const auto& s : frozen->stage_outputs) bytes += s.data.size() * sizeof(T);
        std::lock_guard lock(cache_mutex_);
        if (cache_bytes_ + bytes > cache_budget_) {
          cache_.clear();
          cache_bytes_ = 0;
        }
        if (cache_.emplace(page.key(), frozen).second) cache_bytes_ += bytes;
      }
    }
    maps.push_back(backbone_->forward_trainable(*frozen));
  }
  return maps;
}

template <typename T>
Var<T> DocumentModel<T>::embed(const EncodedDocument& enc, const std::vector<FeatureMap<T>>& maps,
                               const AblationMask& ablation) const {
  return embed_sequence(enc, tables_, maps, ablation, cfg_.page_width, cfg_.page_height);
}

template <typename T>
Var<T> DocumentModel<T>::forward(const EncodedDocument& enc, const AblationMask& ablation, ops::AttentionStats* stats) const {
  if (enc.length() > cfg_.max_seq_len())
    throw std::invalid_argument("sequence of length " + std::to_string(enc.length()) + " exceeds the maximum " +
                                std::to_string(cfg_.max_seq_len()));
  std::vector<FeatureMap<T>> maps;
  if (ablation.use_image) maps = page_feature_maps(enc);
  auto emb = embed(enc, maps, ablation);
  return encoder_.encode(emb, enc.attention_mask, enc.global_mask, stats);
}

template <typename T>
void DocumentModel<T>::clear_feature_cache() const {
  std::lock_guard lock(cache_mutex_);
  cache_.clear();
  cache_bytes_ = 0;
}

template <typename T>
std::size_t DocumentModel<T>::feature_cache_entries() const {
  std::lock_guard lock(cache_mutex_);
  return cache_.size();
}

template class DocumentModel<float>;
template class DocumentModel<double>;

}  // namespace docrep

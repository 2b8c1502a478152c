#include "docrep/embedder.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace docrep {

AblationMask AblationMask::parse(const std::string& name) {
  if (name == "all") return all();
  if (name == "text-only") return text_only();
  if (name == "image-only") return image_only();
  throw std::invalid_argument("unknown ablation '" + name + "' (expected all, text-only or image-only)");
}

std::string AblationMask::name() const {
  if (*this == all()) return "all";
  if (*this == text_only()) return "text-only";
  if (*this == image_only()) return "image-only";
  return "custom";
}

void AblationMask::validate() const {
  if (!use_text && !use_layout && !use_image && !use_page)
    throw std::invalid_argument("ablation mask must enable at least one embedding family");
}

template <typename T>
Tensor<T> sinusoidal_init(int rows, int d) {
  if (d <= 0 || d % 2 != 0) throw std::invalid_argument("sinusoidal_init: width must be positive and even, got " + std::to_string(d));
  Tensor<T> out({rows, d});
  for (int p = 0; p < rows; ++p)
    for (int i = 0; i < d / 2; ++i) {
      const double angle = p / std::pow(10000.0, (2.0 * i) / d);
      out.at(p, 2 * i) = static_cast<T>(std::sin(angle));
      out.at(p, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  return out;
}

template <typename T>
EmbeddingTables<T>::EmbeddingTables(const ModelConfig& cfg, ParameterSet<T>& params, Rng& rng) {
  const int d = cfg.hidden();
  const double s = cfg.embedding_init_std;
  word = params.normal("embeddings.word", "embeddings", {cfg.vocab_size, d}, s, rng);
  position = params.normal("embeddings.position", "embeddings", {cfg.max_seq_len(), d}, s, rng);
  x = params.normal("embeddings.x", "embeddings", {cfg.page_width + 1, d}, s, rng);
  y = params.normal("embeddings.y", "embeddings", {cfg.page_height + 1, d}, s, rng);
  h = params.normal("embeddings.h", "embeddings", {cfg.page_height + 1, d}, s, rng);
  w = params.normal("embeddings.w", "embeddings", {cfg.page_width + 1, d}, s, rng);
  page = params.add("embeddings.page", "embeddings.page", sinusoidal_init<T>(cfg.max_pages, d));
  if (!cfg.trainable_page_embeddings) params.set_group_trainable("embeddings.page", false);
  const int d_img = cfg.backbone.d_img();
  image_weight = params.normal("embeddings.image_proj.weight", "embeddings", {d_img, d}, cfg.init_std, rng);
  image_bias = params.zeros("embeddings.image_proj.bias", "embeddings", {d});
}

template <typename T>
EmbeddingTerms<T> embedding_terms(const EncodedDocument& enc, const EmbeddingTables<T>& t,
                                  const std::vector<FeatureMap<T>>& maps, const AblationMask& ablation,
                                  int page_width, int page_height) {
  ablation.validate();
  const auto S = enc.length();
  EmbeddingTerms<T> out;
  std::vector<std::int64_t> positions(static_cast<std::size_t>(S));
  std::iota(positions.begin(), positions.end(), 0);
  out.position = ops::gather_rows(t.position, positions);
  if (ablation.use_text) out.text = ops::gather_rows(t.word, enc.input_ids);
  if (ablation.use_layout)
    out.layout = ops::add_n<T>({ops::gather_rows(t.x, enc.x1s), ops::gather_rows(t.x, enc.x2s), ops::gather_rows(t.y, enc.y1s),
                                ops::gather_rows(t.y, enc.y2s), ops::gather_rows(t.h, enc.hs), ops::gather_rows(t.w, enc.ws)});
  if (ablation.use_page) out.page = ops::gather_rows(t.page, enc.page_ids);
  if (ablation.use_image) {
    std::vector<std::int64_t> map_index(static_cast<std::size_t>(S), -1);
    std::vector<ops::Region> regions(static_cast<std::size_t>(S));
    for (std::int64_t s = 0; s < S; ++s) {
      if (!enc.attention_mask[s]) continue;
      const auto page = enc.page_ids[s];
      if (page < 0 || page >= static_cast<std::int64_t>(enc.image_source.size()))
        throw std::invalid_argument("embed_sequence: position " + std::to_string(s) + " references page " + std::to_string(page) +
                                    " without an image");
      const auto src = enc.image_source[page];
      if (src < 0 || src >= static_cast<int>(maps.size()))
        throw std::invalid_argument("embed_sequence: no feature map for page " + std::to_string(page));
      map_index[s] = src;
      const auto& m = maps[src];
      regions[s] = scale_bbox(BBox{static_cast<int>(enc.x1s[s]), static_cast<int>(enc.y1s[s]), static_cast<int>(enc.x2s[s]),
                                   static_cast<int>(enc.y2s[s])},
                              page_width, page_height, static_cast<int>(m.width()), static_cast<int>(m.height()));
    }
    std::vector<Var<T>> values;
    values.reserve(maps.size());
    for (const auto& m : maps) values.push_back(m.values);
    out.image = ops::linear(ops::roi_max_pool(values, map_index, regions), t.image_weight, t.image_bias);
  }
  return out;
}

template <typename T>
Var<T> embed_sequence(const EncodedDocument& enc, const EmbeddingTables<T>& tables, const std::vector<FeatureMap<T>>& maps,
                      const AblationMask& ablation, int page_width, int page_height) {
  auto terms = embedding_terms(enc, tables, maps, ablation, page_width, page_height);
  std::vector<Var<T>> parts{terms.position};
  for (const auto* v : {&terms.text, &terms.layout, &terms.image, &terms.page})
    if (v->defined()) parts.push_back(*v);
  return ops::mask_rows(ops::add_n(parts), enc.attention_mask);
}

template Tensor<float> sinusoidal_init<float>(int, int);
template Tensor<double> sinusoidal_init<double>(int, int);
template struct EmbeddingTables<float>;
template struct EmbeddingTables<double>;
template EmbeddingTerms<float> embedding_terms(const EncodedDocument&, const EmbeddingTables<float>&,
                                               const std::vector<FeatureMap<float>>&, const AblationMask&, int, int);
template EmbeddingTerms<double> embedding_terms(const EncodedDocument&, const EmbeddingTables<double>&,
                                                const std::vector<FeatureMap<double>>&, const AblationMask&, int, int);
template Var<float> embed_sequence(const EncodedDocument&, const EmbeddingTables<float>&, const std::vector<FeatureMap<float>>&,
                                   const AblationMask&, int, int);
template Var<double> embed_sequence(const EncodedDocument&, const EmbeddingTables<double>&,
                                    const std::vector<FeatureMap<double>>&, const AblationMask&, int, int);

}  // namespace docrep

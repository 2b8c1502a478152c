#pragma once

#include <string>
#include <vector>

#include "docrep/config.hpp"
#include "docrep/corpus.hpp"
#include "docrep/parameters.hpp"
#include "docrep/vision.hpp"

namespace docrep {

/// Which embedding families enter the fused input. The 1-D position term is
/// always present.
struct AblationMask {
  bool use_text = true;
  bool use_layout = true;
  bool use_image = true;
  bool use_page = true;

  static AblationMask all() { return {}; }
  static AblationMask text_only() { return {true, false, false, true}; }
  static AblationMask image_only() { return {false, false, true, true}; }
  /// Accepts "all", "text-only", "image-only".
  static AblationMask parse(const std::string& name);
  std::string name() const;
  void validate() const;
  bool operator==(const AblationMask&) const = default;
};

/// Row p, column 2i: sin(p / 10000^(2i/d)); column 2i+1: cos of the same.
template <typename T>
Tensor<T> sinusoidal_init(int rows, int d);

template <typename T>
struct EmbeddingTables {
  Var<T> word;      // n_v x d
  Var<T> position;  // S_max x d
  Var<T> x;         // (u+1) x d, shared by x1 and x2
  Var<T> y;         // (v+1) x d, shared by y1 and y2
  Var<T> h;         // (v+1) x d
  Var<T> w;         // (u+1) x d
  Var<T> page;      // n_p x d, sinusoidal at initialization
  Var<T> image_weight;  // d_img x d
  Var<T> image_bias;    // d

  EmbeddingTables() = default;
  EmbeddingTables(const ModelConfig& cfg, ParameterSet<T>& params, Rng& rng);
};

/// Per-family contributions, each S x d; disabled families are undefined.
template <typename T>
struct EmbeddingTerms {
  Var<T> text, position, layout, image, page;
};

template <typename T>
EmbeddingTerms<T> embedding_terms(const EncodedDocument& enc, const EmbeddingTables<T>& tables,
                                  const std::vector<FeatureMap<T>>& maps, const AblationMask& ablation,
                                  int page_width, int page_height);

/// Sum of the enabled families; padding rows are zero.
template <typename T>
Var<T> embed_sequence(const EncodedDocument& enc, const EmbeddingTables<T>& tables, const std::vector<FeatureMap<T>>& maps,
                      const AblationMask& ablation, int page_width, int page_height);

}  // namespace docrep

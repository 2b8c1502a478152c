#pragma once

#include <vector>

#include "docrep/config.hpp"
#include "docrep/corpus.hpp"
#include "docrep/ops.hpp"
#include "docrep/parameters.hpp"

namespace docrep {

/// Pyramid output for one page: values [d_img, v', u'].
template <typename T>
struct FeatureMap {
  Var<T> values;
  int stride = 1;

  std::int64_t channels() const { return values.shape()[0]; }
  std::int64_t height() const { return values.shape()[1]; }
  std::int64_t width() const { return values.shape()[2]; }
};

/// Output of the frozen leading parameter groups; constant with respect to
/// training and therefore cacheable per page image.
template <typename T>
struct FrozenFeatures {
  /// Output of the last frozen group (the raw image when nothing is frozen).
  Tensor<T> last;
  /// Number of groups already applied.
  int groups_done = 0;
  /// Outputs of the residual stages that ran inside the frozen prefix.
  std::vector<Tensor<T>> stage_outputs;
};

/// ceil(extent / stride)
int feature_extent(int extent, int stride);

/// Maps a page-frame box onto feature-map cells. The region is clamped into
/// the map and widened to at least one cell on each axis.
ops::Region scale_bbox(const BBox& box, int page_width, int page_height, int map_width, int map_height);

/// Per-channel max over a region (evaluation path, no tape).
template <typename T>
std::vector<T> roi_pool(const FeatureMap<T>& map, const ops::Region& region);

/// Residual convolutional backbone with a top-down feature pyramid. Groups,
/// in order: stem, stage1..stageN, fpn. The first `frozen` groups get no
/// gradient.
template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, int page_width, int page_height, ParameterSet<T>& params, Rng& rng);

  /// Full forward; records a tape through trainable groups.
  FeatureMap<T> extract(const Tensor<T>& image) const;
  FrozenFeatures<T> forward_frozen(const Tensor<T>& image) const;
  FeatureMap<T> forward_trainable(const FrozenFeatures<T>& frozen) const;

  const BackboneConfig& config() const { return cfg_; }
  int map_width() const { return feature_extent(page_width_, cfg_.output_stride()); }
  int map_height() const { return feature_extent(page_height_, cfg_.output_stride()); }
  std::vector<std::string> group_names() const;
  int frozen_groups() const { return frozen_; }

 private:
  struct Conv {
    Var<T> weight, bias;
    int kernel = 3, stride = 1;
    Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, kernel, stride); }
  };
  struct Stage {
    Conv down, res_a, res_b;
  };

  Var<T> run_stage(const Stage& s, const Var<T>& x) const;
  void check_image(const Tensor<T>& image) const;

  BackboneConfig cfg_;
  int page_width_, page_height_;
  int frozen_;
  int output_level_;
  Conv stem_;
  std::vector<Stage> stages_;
  /// Indexed by pyramid level; only levels >= output level are populated.
  std::vector<Conv> lateral_, smooth_;
};

}  // namespace docrep

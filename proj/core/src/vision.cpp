#include "docrep/vision.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace docrep {

int feature_extent(int extent, int stride) { return (extent + stride - 1) / stride; }

ops::Region scale_bbox(const BBox& box, int page_width, int page_height, int map_width, int map_height) {
  auto lo = [](std::int64_t c, std::int64_t from, std::int64_t to) { return std::clamp<std::int64_t>(c * to / from, 0, to - 1); };
  auto hi = [](std::int64_t c, std::int64_t from, std::int64_t to, std::int64_t min_value) {
    return std::clamp<std::int64_t>((c * to + from - 1) / from, min_value, to);
  };
  ops::Region r;
  r.left = lo(box.x1, page_width, map_width);
  r.top = lo(box.y1, page_height, map_height);
  r.right = hi(box.x2, page_width, map_width, r.left + 1);
  r.bottom = hi(box.y2, page_height, map_height, r.top + 1);
  return r;
}

template <typename T>
std::vector<T> roi_pool(const FeatureMap<T>& map, const ops::Region& region) {
  const auto& v = map.values.value();
  const auto C = map.channels(), H = map.height(), W = map.width();
  if (region.left < 0 || region.top < 0 || region.right > W || region.bottom > H || region.left >= region.right ||
      region.top >= region.bottom)
    throw std::invalid_argument("roi_pool: empty or out-of-map region");
  std::vector<T> out(static_cast<std::size_t>(C), -std::numeric_limits<T>::infinity());
  for (std::int64_t c = 0; c < C; ++c)
    for (auto y = region.top; y < region.bottom; ++y)
      for (auto x = region.left; x < region.right; ++x) out[c] = std::max(out[c], v.data[(c * H + y) * W + x]);
  return out;
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& cfg, int page_width, int page_height, ParameterSet<T>& params, Rng& rng)
    : cfg_(cfg), page_width_(page_width), page_height_(page_height) {
  frozen_ = cfg.resolved_frozen_groups();
  output_level_ = cfg.resolved_output_level();
  const auto stages = cfg.stages();
  auto conv = [&](const std::string& name, const std::string& group, int cin, int cout, int k, int stride) {
    Conv c;
    c.kernel = k;
    c.stride = stride;
    const int fan_in = cin * k * k;
    c.weight = params.normal(name + ".weight", group, {cout, fan_in}, std::sqrt(2.0 / fan_in), rng);
    c.bias = params.zeros(name + ".bias", group, {cout});
    return c;
  };
  const auto groups = group_names();
  stem_ = conv("backbone.stem", groups[0], 3, cfg.stem_channels(), cfg.stem_stride(), cfg.stem_stride());
  int cin = cfg.stem_channels();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& g = groups[i + 1];
    const auto base = "backbone.stage" + std::to_string(i + 1);
    Stage s;
    s.down = conv(base + ".down", g, cin, stages[i].channels, 3, stages[i].stride);
    s.res_a = conv(base + ".res_a", g, stages[i].channels, stages[i].channels, 3, 1);
    s.res_b = conv(base + ".res_b", g, stages[i].channels, stages[i].channels, 3, 1);
    stages_.push_back(std::move(s));
    cin = stages[i].channels;
  }
  lateral_.resize(stages.size());
  smooth_.resize(stages.size());
  const int d_img = cfg.d_img();
  for (int level = static_cast<int>(stages.size()) - 1; level >= output_level_; --level) {
    const auto base = "backbone.fpn.level" + std::to_string(level);
    lateral_[level] = conv(base + ".lateral", groups.back(), stages[level].channels, d_img, 1, 1);
  }
  smooth_[output_level_] = conv("backbone.fpn.level" + std::to_string(output_level_) + ".smooth", groups.back(), d_img, d_img, 3, 1);
  for (int g = 0; g < frozen_; ++g) params.set_group_trainable(groups[g], false);
}

template <typename T>
std::vector<std::string> Backbone<T>::group_names() const {
  std::vector<std::string> names{"backbone.stem"};
  for (std::size_t i = 0; i < cfg_.stages().size(); ++i) names.push_back("backbone.stage" + std::to_string(i + 1));
  names.push_back("backbone.fpn");
  return names;
}

template <typename T>
void Backbone<T>::check_image(const Tensor<T>& image) const {
  if (image.shape != Shape{3, page_height_, page_width_})
    throw std::invalid_argument("backbone expects a (3, " + std::to_string(page_height_) + ", " + std::to_string(page_width_) +
                                ") image, got " + shape_str(image.shape));
}

template <typename T>
Var<T> Backbone<T>::run_stage(const Stage& s, const Var<T>& x) const {
  auto h = ops::relu(s.down(x));
  auto r = s.res_b(ops::relu(s.res_a(h)));
  return ops::relu(ops::add(h, r));
}

template <typename T>
FrozenFeatures<T> Backbone<T>::forward_frozen(const Tensor<T>& image) const {
  check_image(image);
  FrozenFeatures<T> out;
  const int n = static_cast<int>(stages_.size());
  const int limit = std::min(frozen_, n + 1);
  if (limit == 0) {
    out.last = image;
    return out;
  }
  Var<T> cur = ops::relu(stem_(ops::constant(image)));
  out.groups_done = 1;
  while (out.groups_done < limit) {
    const int stage = out.groups_done - 1;
    cur = run_stage(stages_[stage], cur);
    ++out.groups_done;
    if (stage >= output_level_ && stage < n - 1) out.stage_outputs.push_back(cur.value());
  }
  if (out.groups_done == n + 1) out.stage_outputs.push_back(cur.value());
  else out.last = cur.value();
  return out;
}

template <typename T>
FeatureMap<T> Backbone<T>::forward_trainable(const FrozenFeatures<T>& frozen) const {
  const int n = static_cast<int>(stages_.size());
  std::vector<Var<T>> outputs(static_cast<std::size_t>(n));
  std::size_t cached = 0;
  for (int stage = output_level_; stage < std::min(frozen.groups_done - 1, n); ++stage)
    outputs[stage] = ops::constant(frozen.stage_outputs.at(cached++));
  Var<T> cur;
  if (frozen.groups_done < n + 1) cur = ops::constant(frozen.last);
  if (frozen.groups_done == 0) cur = ops::relu(stem_(cur));
  for (int g = std::max(frozen.groups_done, 1); g <= n; ++g) {
    cur = run_stage(stages_[g - 1], cur);
    outputs[g - 1] = cur;
  }
  Var<T> pyramid = lateral_[n - 1](outputs[n - 1]);
  for (int level = n - 2; level >= output_level_; --level)
    pyramid = ops::add_upsampled(lateral_[level](outputs[level]), pyramid);
  FeatureMap<T> map;
  map.values = smooth_[output_level_](pyramid);
  map.stride = cfg_.output_stride();
  return map;
}

template <typename T>
FeatureMap<T> Backbone<T>::extract(const Tensor<T>& image) const {
  return forward_trainable(forward_frozen(image));
}

template std::vector<float> roi_pool(const FeatureMap<float>&, const ops::Region&);
template std::vector<double> roi_pool(const FeatureMap<double>&, const ops::Region&);
template class Backbone<float>;
template class Backbone<double>;

}  // namespace docrep

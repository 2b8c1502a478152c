#pragma once

#include <string>
#include <vector>

#include "docrep/rng.hpp"
#include "docrep/tensor.hpp"

namespace docrep {

template <typename T>
struct Parameter {
  std::string name;
  /// Coarse grouping used for freezing and per-group diagnostics.
  std::string group;
  Var<T> var;
};

/// Registry of every learnable array of a model, in creation order.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(std::string name, std::string group, Tensor<T> init);
  Var<T> normal(std::string name, std::string group, Shape shape, double stddev, Rng& rng);
  Var<T> zeros(std::string name, std::string group, Shape shape);
  Var<T> ones(std::string name, std::string group, Shape shape);

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  const Parameter<T>& find(const std::string& name) const;
  Parameter<T>& find(const std::string& name);
  std::vector<std::string> groups() const;

  void set_group_trainable(const std::string& group, bool trainable);
  void zero_grad();
  std::int64_t count(bool trainable_only = false) const;

 private:
  std::vector<Parameter<T>> params_;
};

}  // namespace docrep

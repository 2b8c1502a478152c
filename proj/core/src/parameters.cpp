#include "docrep/parameters.hpp"

#include <algorithm>
#include <stdexcept>

namespace docrep {

template <typename T>
Var<T> ParameterSet<T>::add(std::string name, std::string group, Tensor<T> init) {
  for (const auto& p : params_)
    if (p.name == name) throw std::logic_error("duplicate parameter name " + name);
  Var<T> v(std::move(init), true);
  params_.push_back({std::move(name), std::move(group), v});
  return v;
}

template <typename T>
Var<T> ParameterSet<T>::normal(std::string name, std::string group, Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& x : t.data) x = static_cast<T>(rng.normal() * stddev);
  return add(std::move(name), std::move(group), std::move(t));
}

template <typename T>
Var<T> ParameterSet<T>::zeros(std::string name, std::string group, Shape shape) {
  return add(std::move(name), std::move(group), Tensor<T>(std::move(shape), T(0)));
}

template <typename T>
Var<T> ParameterSet<T>::ones(std::string name, std::string group, Shape shape) {
  return add(std::move(name), std::move(group), Tensor<T>(std::move(shape), T(1)));
}

template <typename T>
const Parameter<T>& ParameterSet<T>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + name);
}

template <typename T>
Parameter<T>& ParameterSet<T>::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + name);
}

template <typename T>
std::vector<std::string> ParameterSet<T>::groups() const {
  std::vector<std::string> out;
  for (const auto& p : params_)
    if (std::find(out.begin(), out.end(), p.group) == out.end()) out.push_back(p.group);
  return out;
}

template <typename T>
void ParameterSet<T>::set_group_trainable(const std::string& group, bool trainable) {
  bool found = false;
  for (auto& p : params_)
    if (p.group == group) {
      p.var.set_requires_grad(trainable);
      if (!trainable) p.var.zero_grad();
      found = true;
    }
  if (!found) throw std::out_of_range("no parameter group named " + group);
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template <typename T>
std::int64_t ParameterSet<T>::count(bool trainable_only) const {
  std::int64_t n = 0;
  for (const auto& p : params_)
    if (!trainable_only || p.var.requires_grad()) n += p.var.numel();
  return n;
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace docrep

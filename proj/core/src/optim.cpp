#include "docrep/optim.hpp"

#include <cmath>

namespace docrep {

template <typename T>
void AdamW<T>::step(ParameterSet<T>& params, double lr) {
  auto& all = params.all();
  if (slots_.size() < all.size()) slots_.resize(all.size());
  const double b1 = opts_.beta1, b2 = opts_.beta2;
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& var = all[i].var;
    if (!var.requires_grad() || var.grad().empty()) continue;
    auto& slot = slots_[i];
    auto& p = var.mutable_value().data;
    const auto& g = var.grad();
    if (slot.m.empty()) {
      slot.m.assign(p.size(), T(0));
      slot.v.assign(p.size(), T(0));
    }
    ++slot.steps;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(slot.steps));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(slot.steps));
    for (std::size_t j = 0; j < p.size(); ++j) {
      slot.m[j] = static_cast<T>(b1 * slot.m[j] + (1.0 - b1) * g[j]);
      slot.v[j] = static_cast<T>(b2 * slot.v[j] + (1.0 - b2) * g[j] * g[j]);
      const double mhat = slot.m[j] / c1;
      const double vhat = slot.v[j] / c2;
      p[j] = static_cast<T>(p[j] - lr * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * p[j]));
    }
  }
  ++updates_;
}

template <typename T>
double gradient_norm(const ParameterSet<T>& params) {
  double sq = 0;
  for (const auto& p : params.all()) {
    if (!p.var.requires_grad()) continue;
    for (T g : p.var.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_gradients(ParameterSet<T>& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& p : params.all())
      for (auto& g : p.var.grad()) g *= f;
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double gradient_norm(const ParameterSet<float>&);
template double gradient_norm(const ParameterSet<double>&);
template double clip_gradients(ParameterSet<float>&, double);
template double clip_gradients(ParameterSet<double>&, double);

}  // namespace docrep

#pragma once

#include <cstdint>
#include <vector>

#include "docrep/parameters.hpp"

namespace docrep {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Frozen parameters and parameters that
/// received no gradient since the last update are left untouched.
template <typename T>
class AdamW {
 public:
  struct Slot {
    std::int64_t steps = 0;
    std::vector<T> m, v;
  };

  AdamW() = default;
  explicit AdamW(const AdamWOptions& opts) : opts_(opts) {}

  void step(ParameterSet<T>& params, double lr);
  /// Number of step() calls so far.
  std::int64_t updates() const { return updates_; }

  const AdamWOptions& options() const { return opts_; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  void set_updates(std::int64_t n) { updates_ = n; }

 private:
  AdamWOptions opts_;
  std::vector<Slot> slots_;
  std::int64_t updates_ = 0;
};

/// Global L2 norm over the gradients of trainable parameters.
template <typename T>
double gradient_norm(const ParameterSet<T>& params);

/// Rescales gradients so their global norm is at most max_norm; returns the
/// norm before clipping.
template <typename T>
double clip_gradients(ParameterSet<T>& params, double max_norm);

}  // namespace docrep

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "torsd/config.hpp"
#include "torsd/layers.hpp"

namespace torsd {

/// SGD with heavy-ball momentum and L2 weight decay on every parameter:
/// g += wd * w; v = mu * v + g; w -= lr * v.
template <typename T>
class Sgd {
public:
  /// `clip_norm` > 0 rescales the gradients of each step so their global L2
  /// norm is at most clip_norm (weight decay is added afterwards).
  Sgd(T momentum, T weight_decay, T clip_norm = T(0))
      : momentum_(momentum), weight_decay_(weight_decay), clip_norm_(clip_norm) {}

  void step(const ParamList<T> &params, T lr);

  /// Momentum buffer per parameter name; created on the first step.
  std::map<std::string, Tensor<T>> &state() { return velocity_; }
  const std::map<std::string, Tensor<T>> &state() const { return velocity_; }

private:
  T momentum_;
  T weight_decay_;
  T clip_norm_;
  std::map<std::string, Tensor<T>> velocity_;
};

/// Cosine one-cycle: rises from peak/25 at step 0 to the peak at 30% of the
/// run, then anneals to peak/1e4 at the last step. Throws ArgumentError when
/// step is outside [0, total_steps).
double one_cycle_lr(std::size_t step, std::size_t total_steps, double peak_lr);

/// Learning rate of `step` under the configured scheduler.
double scheduled_lr(const OptimConfig &opt, std::size_t step, std::size_t total_steps);

} // namespace torsd

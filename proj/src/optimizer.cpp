// SPDX-License-Identifier: Apache-2.0
#include "torsd/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "torsd/errors.hpp"

namespace torsd {

template <typename T>
void Sgd<T>::step(const ParamList<T> &params, T lr) {
  T scale = T(1);
  if (clip_norm_ > T(0)) {
    double sq = 0;
    for (const auto &np : params) {
      for (T g : np.param->grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > static_cast<double>(clip_norm_)) scale = static_cast<T>(clip_norm_ / norm);
  }
  for (const auto &np : params) {
    Param<T> &p = *np.param;
    auto [it, fresh] = velocity_.try_emplace(np.name, p.value.shape());
    Tensor<T> &v = it->second;
    if (!fresh) require_shape(v.shape(), p.value.shape(), "momentum buffer " + np.name);
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const T g = scale * p.grad[i] + weight_decay_ * p.value[i];
      v[i] = momentum_ * v[i] + g;
      p.value[i] -= lr * v[i];
    }
  }
}

double one_cycle_lr(std::size_t step, std::size_t total_steps, double peak_lr) {
  if (step >= total_steps) {
    throw ArgumentError("step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + ")");
  }
  const double initial = peak_lr / 25.0;
  const double final_lr = peak_lr / 1e4;
  if (total_steps == 1) return initial;
  const auto warm = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(0.3 * static_cast<double>(total_steps))), 1,
      total_steps - 1);
  const double pi = std::numbers::pi;
  if (step < warm) {
    const double frac = static_cast<double>(step) / static_cast<double>(warm);
    return initial + (peak_lr - initial) * 0.5 * (1.0 - std::cos(pi * frac));
  }
  const std::size_t span = total_steps - 1 - warm;
  if (span == 0) return peak_lr;
  const double frac = static_cast<double>(step - warm) / static_cast<double>(span);
  return final_lr + (peak_lr - final_lr) * 0.5 * (1.0 + std::cos(pi * frac));
}

double scheduled_lr(const OptimConfig &opt, std::size_t step, std::size_t total_steps) {
  if (opt.scheduler == Scheduler::constant) {
    if (step >= total_steps) {
      throw ArgumentError("step " + std::to_string(step) + " outside [0, " +
                          std::to_string(total_steps) + ")");
    }
    return opt.peak_lr;
  }
  return one_cycle_lr(step, total_steps, opt.peak_lr);
}

template class Sgd<float>;
template class Sgd<double>;

} // namespace torsd

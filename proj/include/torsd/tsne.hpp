// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "torsd/separability.hpp"

namespace torsd {

struct TsneOptions {
  double perplexity = 30;
  std::size_t iterations = 1000;
  double learning_rate = 200;
  double early_exaggeration = 12;
  std::size_t exaggeration_iters = 250;
  std::uint64_t seed = 0;
};

/// Exact (O(N^2) per iteration) t-SNE of the feature rows. The perplexity
/// is capped at (N - 1) / 3 for small inputs. Throws ArgumentError for
/// fewer than 5 samples.
std::vector<std::array<double, 2>> embed_2d(const DepthFeatureSet &features,
                                            const TsneOptions &options = {});

} // namespace torsd

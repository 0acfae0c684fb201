// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "torsd/separability.hpp"
#include "torsd/trainer.hpp"

namespace torsd {

struct EmbeddingSet {
  std::size_t depth = 0;
  std::vector<std::array<double, 2>> points;
  std::vector<int> labels;
};

/// Writes under `out_dir`:
///   separability.csv        depth,SSE,SSB,ratio (empty ratio when undefined)
///   embeddings_depth{i}.csv x,y,label
///   embeddings_depth{i}.svg scatter plot per depth
///   separability.svg        ratio against depth
///   eval_history.csv        epoch,accuracy,loss (only when history is given)
/// Throws IoError when the directory cannot be written.
void emit_report(const std::vector<Separability> &separability,
                 const std::vector<EmbeddingSet> &embeddings,
                 const std::vector<EvalReport> &history, const std::filesystem::path &out_dir);

} // namespace torsd

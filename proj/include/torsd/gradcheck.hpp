// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "torsd/config.hpp"
#include "torsd/model.hpp"

namespace torsd {

/// A double-precision bundle with one triplet, small enough to difference.
struct GradcheckProblem {
  TorsdModel<double> model;
  Tensor<double> images; // [3, C, H, W]
  std::vector<int> y_o, y_p, y_n;
};

/// Toy CNN of width 4 on 3x16x16 inputs, 2 classes, embedding width 4;
/// weights and the random triplet are drawn from `seed`.
GradcheckProblem tiny_gradcheck_problem(std::uint64_t seed);

struct GradcheckOptions {
  double step = 1e-6;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator,
  /// so near-zero gradients are compared in absolute terms.
  double floor = 1e-6;
};

struct GroupError {
  std::string name;
  std::size_t size = 0;
  double max_rel_err = 0;
  double max_abs_err = 0;
  bool finite = true;
};

struct GradcheckReport {
  std::vector<GroupError> groups; // one per named parameter
  double max_rel_err = 0;
  bool finite = true;

  bool passed(double tolerance) const { return finite && max_rel_err < tolerance; }
};

/// Central differences of total_loss against the analytic gradient for every
/// parameter. The perturbed losses reuse the unperturbed deepest-depth
/// distillation targets, matching the stop-gradient of the analytic pass.
GradcheckReport gradcheck(GradcheckProblem &problem, const TorsdConfig &cfg,
                          const GradcheckOptions &options = {});

struct TeacherPathGradient {
  std::string name;
  double max_abs_grad = 0;
};

/// Analytic gradient of rd + pld + nld alone for every parameter that only
/// feeds the deepest depth (its block, relation network and auxiliary
/// heads). All entries are zero under the stop-gradient contract.
std::vector<TeacherPathGradient> teacher_path_gradients(GradcheckProblem &problem,
                                                        const TorsdConfig &cfg);

} // namespace torsd

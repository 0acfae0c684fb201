// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "torsd/backbone.hpp"
#include "torsd/config.hpp"
#include "torsd/relation_heads.hpp"

namespace torsd {

/// Everything one forward pass over a triplet batch produces; the input of
/// every loss term.
template <typename T>
struct StepOutputs {
  TappedFeatures<T> features;
  RelationBundle<T> relations;
  AuxOutputs<T> aux;
  std::vector<Tensor<T>> pooled; // GAP of each tap [3T, C_i]; handcrafted RD only
  std::vector<int> y_o, y_p, y_n;

  std::size_t triplets() const { return y_o.size(); }
};

/// dLoss/d(output) for every field of StepOutputs that carries gradient.
/// Empty tensors mean "no gradient".
template <typename T>
struct OutputGrads {
  Tensor<T> logits;
  std::vector<Tensor<T>> r_pos, r_neg, z_pos, z_neg, aux_pos, aux_neg, pooled;
  Tensor<T> logit_r_pos, logit_r_neg;

  static OutputGrads zeros_like(const StepOutputs<T> &out);
};

/// Depth-k values used as distillation targets. When passed to the loss
/// functions these replace the live depth-k values, which is how a frozen
/// teacher is evaluated under finite differences.
template <typename T>
struct TeacherSnapshot {
  Tensor<T> r_pos, r_neg;     // [T, 1]
  Tensor<T> aux_pos, aux_neg; // [T, K]
  std::vector<T> hc_pos, hc_neg;

  static TeacherSnapshot capture(const StepOutputs<T> &out);
};

struct LossBreakdown {
  double task = 0;
  double triplet = 0;
  double rd = 0;
  double pat = 0;
  double pld = 0;
  double nat = 0;
  double nld = 0;
  double logit_cal = 0;
  double handcrafted_rd = 0;
  double total = 0;

  bool finite() const;
  /// CSV columns after `step,lr`.
  static std::string csv_header();
  std::string csv_row() const;
};

// ---------------------------------------------------------------------------
// Row-level primitives. Each returns the value; when `grad` is non-empty,
// scale * dValue/dInput is added into it.

/// -sum_c target_c log softmax(logits)_c.
template <typename T>
T cross_entropy_soft(std::span<const T> logits, std::span<const T> target,
                     std::span<T> grad = {}, T scale = T(1));

/// KL(p || q) with p = softmax(teacher / temp) held constant and
/// q = softmax(student / temp); the gradient is w.r.t. the student only.
template <typename T>
T kl_divergence(std::span<const T> student, std::span<const T> teacher, T temperature,
                std::span<T> grad = {}, T scale = T(1));

/// 0.5 at y_o and 0.5 at y_n. Throws InvalidTripletError when y_o == y_n.
template <typename T>
std::vector<T> make_soft_label(int y_o, int y_n, std::size_t num_classes);

// ---------------------------------------------------------------------------
// Loss terms. Per-pair values are averaged within a depth and summed over
// depths. `grad` may be null. Teacher-side (depth-k) inputs of the
// distillation terms never receive gradient.

/// alpha * sum_{i=1..k} mean max(R_p^i - R_n^i + m, 0). Throws StateError on
/// an empty bundle.
template <typename T>
T triplet_loss(const RelationBundle<T> &bundle, T alpha, T margin, OutputGrads<T> *grad = nullptr);

/// beta * sum_{i<k} mean[(R_p^i - R_p^k)^2 + (R_n^i - R_n^k)^2].
template <typename T>
T relation_distill_loss(const RelationBundle<T> &bundle, T beta, OutputGrads<T> *grad = nullptr,
                        const TeacherSnapshot<T> *teacher = nullptr);

/// gamma_p (1 - lambda) sum_{i=1..k} mean CE(pos_aux^i, y_p). `aux` holds
/// the positive heads' logits xi_p^i(Z_p^i).
template <typename T>
T pat_loss(const AuxOutputs<T> &aux, const std::vector<int> &y_p, T gamma_p, T lambda_mix,
           OutputGrads<T> *grad = nullptr);

/// gamma_p lambda sum_{i<k} mean KL(pos_aux^k || pos_aux^i).
template <typename T>
T pld_loss(const AuxOutputs<T> &aux, T gamma_p, T lambda_mix, T temperature,
           OutputGrads<T> *grad = nullptr, const TeacherSnapshot<T> *teacher = nullptr);

/// gamma_n (1 - lambda) sum_{i=1..k} mean CE(neg_aux^i, 0.5 y_o + 0.5 y_n).
template <typename T>
T nat_loss(const AuxOutputs<T> &aux, const std::vector<int> &y_o, const std::vector<int> &y_n,
           T gamma_n, T lambda_mix, OutputGrads<T> *grad = nullptr);

/// gamma_n lambda sum_{i<k} mean KL(neg_aux^k || neg_aux^i).
template <typename T>
T nld_loss(const AuxOutputs<T> &aux, T gamma_n, T lambda_mix, T temperature,
           OutputGrads<T> *grad = nullptr, const TeacherSnapshot<T> *teacher = nullptr);

/// sigma * mean(psi([l_o; l_p]) - psi([l_o; l_n])), unbounded below.
template <typename T>
T logit_calibration_loss(const RelationBundle<T> &bundle, T sigma,
                         OutputGrads<T> *grad = nullptr);

/// Mean hard-label CE over all rows of `logits` ([3T, K] in triple-major order).
template <typename T>
T task_loss(const Tensor<T> &logits, const std::vector<int> &labels,
            OutputGrads<T> *grad = nullptr);

/// ||GAP(f_a) - GAP(f_b)||_2 for the positive and negative pair of every
/// triplet; `pooled` is [3T, C] in triple-major order.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> handcrafted_relations(const Tensor<T> &pooled);

/// beta * sum_{i<k} mean[(r_p^i - r_p^k)^2 + (r_n^i - r_n^k)^2] with the
/// L2-distance relations above.
template <typename T>
T handcrafted_rd_loss(const std::vector<Tensor<T>> &pooled, T beta,
                      OutputGrads<T> *grad = nullptr,
                      const TeacherSnapshot<T> *teacher = nullptr);

/// task + [rn](triplet + rd) + [ac](pat + pld + nat + nld) + [ld] logit_cal
/// + [handcrafted] handcrafted_rd. Disabled terms are exactly 0.
template <typename T>
LossBreakdown total_loss(const StepOutputs<T> &out, const TorsdConfig &cfg,
                         OutputGrads<T> *grad = nullptr,
                         const TeacherSnapshot<T> *teacher = nullptr);

} // namespace torsd

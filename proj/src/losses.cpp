// SPDX-License-Identifier: Apache-2.0
#include "torsd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "torsd/errors.hpp"

namespace torsd {
namespace {

template <typename T>
T log_sum_exp(std::span<const T> x, T inv_temp) {
  T mx = x[0] * inv_temp;
  for (T v : x) mx = std::max(mx, v * inv_temp);
  T acc = T(0);
  for (T v : x) acc += std::exp(v * inv_temp - mx);
  return mx + std::log(acc);
}

template <typename T>
std::span<const T> row_of(const Tensor<T> &t, std::size_t r) {
  return t.row(r);
}

template <typename T>
std::span<T> grad_row(Tensor<T> *g, std::size_t r) {
  return g ? g->row(r) : std::span<T>{};
}

template <typename T>
void require_depth(std::size_t k, const char *what) {
  if (k < 2) {
    throw ConfigValidationError(std::string(what) + " needs at least 2 depths, got " +
                                std::to_string(k));
  }
}

template <typename T>
Tensor<T> *maybe(std::vector<Tensor<T>> *v, std::size_t i) {
  return v ? &(*v)[i] : nullptr;
}

void check_labels(const std::vector<int> &labels, std::size_t rows, std::size_t classes,
                  const char *what) {
  if (labels.size() != rows) {
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ShapeError(std::string(what) + ": label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
}

} // namespace

bool LossBreakdown::finite() const {
  for (double v : {task, triplet, rd, pat, pld, nat, nld, logit_cal, handcrafted_rd, total}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string LossBreakdown::csv_header() {
  return "task,triplet,rd,pat,pld,nat,nld,logit_cal,handcrafted_rd,total";
}

std::string LossBreakdown::csv_row() const {
  std::ostringstream os;
  os << std::setprecision(9);
  os << task << ',' << triplet << ',' << rd << ',' << pat << ',' << pld << ',' << nat << ','
     << nld << ',' << logit_cal << ',' << handcrafted_rd << ',' << total;
  return os.str();
}

template <typename T>
OutputGrads<T> OutputGrads<T>::zeros_like(const StepOutputs<T> &out) {
  OutputGrads<T> g;
  g.logits = Tensor<T>(out.features.logits.shape());
  auto zeros = [](const std::vector<Tensor<T>> &src) {
    std::vector<Tensor<T>> dst;
    for (const auto &t : src) dst.emplace_back(t.shape());
    return dst;
  };
  g.r_pos = zeros(out.relations.r_pos);
  g.r_neg = zeros(out.relations.r_neg);
  g.z_pos = zeros(out.relations.z_pos);
  g.z_neg = zeros(out.relations.z_neg);
  g.aux_pos = zeros(out.aux.pos);
  g.aux_neg = zeros(out.aux.neg);
  g.pooled = zeros(out.pooled);
  if (!out.relations.logit_r_pos.empty()) {
    g.logit_r_pos = Tensor<T>(out.relations.logit_r_pos.shape());
    g.logit_r_neg = Tensor<T>(out.relations.logit_r_neg.shape());
  }
  return g;
}

template <typename T>
TeacherSnapshot<T> TeacherSnapshot<T>::capture(const StepOutputs<T> &out) {
  TeacherSnapshot<T> s;
  if (!out.relations.empty()) {
    s.r_pos = out.relations.r_pos.back();
    s.r_neg = out.relations.r_neg.back();
  }
  if (!out.aux.empty()) {
    s.aux_pos = out.aux.pos.back();
    s.aux_neg = out.aux.neg.back();
  }
  if (!out.pooled.empty()) {
    std::tie(s.hc_pos, s.hc_neg) = handcrafted_relations(out.pooled.back());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Row-level primitives

template <typename T>
T cross_entropy_soft(std::span<const T> logits, std::span<const T> target, std::span<T> grad,
                     T scale) {
  if (logits.size() != target.size() || logits.empty()) {
    throw ShapeError("cross entropy: " + std::to_string(logits.size()) + " logits vs " +
                     std::to_string(target.size()) + " targets");
  }
  const T lse = log_sum_exp(logits, T(1));
  T value = T(0), mass = T(0);
  for (std::size_t c = 0; c < logits.size(); ++c) {
    value -= target[c] * (logits[c] - lse);
    mass += target[c];
  }
  if (!grad.empty()) {
    for (std::size_t c = 0; c < logits.size(); ++c) {
      grad[c] += scale * (std::exp(logits[c] - lse) * mass - target[c]);
    }
  }
  return value;
}

template <typename T>
T kl_divergence(std::span<const T> student, std::span<const T> teacher, T temperature,
                std::span<T> grad, T scale) {
  if (student.size() != teacher.size() || student.empty()) {
    throw ShapeError("kl divergence: " + std::to_string(student.size()) + " vs " +
                     std::to_string(teacher.size()) + " logits");
  }
  if (!(temperature > T(0))) throw ArgumentError("kl divergence temperature must be > 0");
  const T inv = T(1) / temperature;
  const T lse_s = log_sum_exp(student, inv);
  const T lse_t = log_sum_exp(teacher, inv);
  T value = T(0);
  for (std::size_t c = 0; c < student.size(); ++c) {
    const T log_p = teacher[c] * inv - lse_t;
    const T p = std::exp(log_p);
    const T log_q = student[c] * inv - lse_s;
    if (p > T(0)) value += p * (log_p - log_q);
    if (!grad.empty()) grad[c] += scale * (std::exp(log_q) - p) * inv;
  }
  return std::max(value, T(0));
}

template <typename T>
std::vector<T> make_soft_label(int y_o, int y_n, std::size_t num_classes) {
  if (y_o == y_n) {
    throw InvalidTripletError("negative label " + std::to_string(y_n) +
                              " equals the anchor label");
  }
  if (y_o < 0 || y_n < 0 || static_cast<std::size_t>(y_o) >= num_classes ||
      static_cast<std::size_t>(y_n) >= num_classes) {
    throw ShapeError("soft label index outside [0, " + std::to_string(num_classes) + ")");
  }
  std::vector<T> out(num_classes, T(0));
  out[static_cast<std::size_t>(y_o)] = T(0.5);
  out[static_cast<std::size_t>(y_n)] = T(0.5);
  return out;
}

// ---------------------------------------------------------------------------
// Relation terms

template <typename T>
T triplet_loss(const RelationBundle<T> &bundle, T alpha, T margin, OutputGrads<T> *grad) {
  if (bundle.empty()) throw StateError("triplet loss on an empty relation bundle");
  T total = T(0);
  for (std::size_t d = 0; d < bundle.depth(); ++d) {
    const auto &rp = bundle.r_pos[d];
    const auto &rn = bundle.r_neg[d];
    const std::size_t n = rp.numel();
    const T w = alpha / static_cast<T>(n);
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T h = rp[j] - rn[j] + margin;
      if (h > T(0)) {
        sum += h;
        if (grad) {
          grad->r_pos[d][j] += w;
          grad->r_neg[d][j] -= w;
        }
      }
    }
    total += sum / static_cast<T>(n);
  }
  return alpha * total;
}

template <typename T>
T relation_distill_loss(const RelationBundle<T> &bundle, T beta, OutputGrads<T> *grad,
                        const TeacherSnapshot<T> *teacher) {
  const std::size_t k = bundle.depth();
  require_depth<T>(k, "relation distillation");
  const Tensor<T> &tp = teacher ? teacher->r_pos : bundle.r_pos[k - 1];
  const Tensor<T> &tn = teacher ? teacher->r_neg : bundle.r_neg[k - 1];
  T total = T(0);
  for (std::size_t d = 0; d + 1 < k; ++d) {
    const auto &rp = bundle.r_pos[d];
    const auto &rn = bundle.r_neg[d];
    const std::size_t n = rp.numel();
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T dp = rp[j] - tp[j];
      const T dn = rn[j] - tn[j];
      sum += dp * dp + dn * dn;
      if (grad) {
        grad->r_pos[d][j] += T(2) * beta * dp / static_cast<T>(n);
        grad->r_neg[d][j] += T(2) * beta * dn / static_cast<T>(n);
      }
    }
    total += sum / static_cast<T>(n);
  }
  return beta * total;
}

// ---------------------------------------------------------------------------
// Auxiliary classifier terms

template <typename T>
T pat_loss(const AuxOutputs<T> &aux, const std::vector<int> &y_p, T gamma_p, T lambda_mix,
           OutputGrads<T> *grad) {
  if (aux.empty()) {
    throw ConfigValidationError("auxiliary task loss needs relation-network projections",
                                "enable_ac");
  }
  const T pre = gamma_p * (T(1) - lambda_mix);
  T total = T(0);
  for (std::size_t d = 0; d < aux.pos.size(); ++d) {
    const auto &logits = aux.pos[d];
    const std::size_t n = logits.dim(0), classes = logits.dim(1);
    check_labels(y_p, n, classes, "positive auxiliary task");
    T sum = T(0);
    std::vector<T> target(classes);
    for (std::size_t j = 0; j < n; ++j) {
      std::fill(target.begin(), target.end(), T(0));
      target[static_cast<std::size_t>(y_p[j])] = T(1);
      sum += cross_entropy_soft<T>(logits.row(j), target,
                                   grad_row(maybe(grad ? &grad->aux_pos : nullptr, d), j),
                                   pre / static_cast<T>(n));
    }
    total += sum / static_cast<T>(n);
  }
  return pre * total;
}

template <typename T>
T nat_loss(const AuxOutputs<T> &aux, const std::vector<int> &y_o, const std::vector<int> &y_n,
           T gamma_n, T lambda_mix, OutputGrads<T> *grad) {
  if (aux.empty()) {
    throw ConfigValidationError("auxiliary task loss needs relation-network projections",
                                "enable_ac");
  }
  const T pre = gamma_n * (T(1) - lambda_mix);
  T total = T(0);
  for (std::size_t d = 0; d < aux.neg.size(); ++d) {
    const auto &logits = aux.neg[d];
    const std::size_t n = logits.dim(0), classes = logits.dim(1);
    check_labels(y_o, n, classes, "negative auxiliary task (anchor)");
    if (y_n.size() != n) throw ShapeError("negative auxiliary task: label count mismatch");
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const auto target = make_soft_label<T>(y_o[j], y_n[j], classes);
      sum += cross_entropy_soft<T>(logits.row(j), target,
                                   grad_row(maybe(grad ? &grad->aux_neg : nullptr, d), j),
                                   pre / static_cast<T>(n));
    }
    total += sum / static_cast<T>(n);
  }
  return pre * total;
}

namespace {

template <typename T>
T logit_distill(const std::vector<Tensor<T>> &per_depth, const Tensor<T> &teacher, T pre,
                T temperature, std::vector<Tensor<T>> *grads) {
  T total = T(0);
  for (std::size_t d = 0; d + 1 < per_depth.size(); ++d) {
    const auto &student = per_depth[d];
    const std::size_t n = student.dim(0);
    require_shape(teacher.shape(), student.shape(), "logit distillation teacher");
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      sum += kl_divergence<T>(student.row(j), teacher.row(j), temperature,
                              grad_row(maybe(grads, d), j), pre / static_cast<T>(n));
    }
    total += sum / static_cast<T>(n);
  }
  return pre * total;
}

} // namespace

template <typename T>
T pld_loss(const AuxOutputs<T> &aux, T gamma_p, T lambda_mix, T temperature,
           OutputGrads<T> *grad, const TeacherSnapshot<T> *teacher) {
  require_depth<T>(aux.pos.size(), "positive logit distillation");
  const Tensor<T> &deep = teacher ? teacher->aux_pos : aux.pos.back();
  return logit_distill(aux.pos, deep, gamma_p * lambda_mix, temperature,
                       grad ? &grad->aux_pos : nullptr);
}

template <typename T>
T nld_loss(const AuxOutputs<T> &aux, T gamma_n, T lambda_mix, T temperature,
           OutputGrads<T> *grad, const TeacherSnapshot<T> *teacher) {
  require_depth<T>(aux.neg.size(), "negative logit distillation");
  const Tensor<T> &deep = teacher ? teacher->aux_neg : aux.neg.back();
  return logit_distill(aux.neg, deep, gamma_n * lambda_mix, temperature,
                       grad ? &grad->aux_neg : nullptr);
}

// ---------------------------------------------------------------------------
// Backbone-level terms

template <typename T>
T logit_calibration_loss(const RelationBundle<T> &bundle, T sigma, OutputGrads<T> *grad) {
  const auto &rp = bundle.logit_r_pos;
  const auto &rn = bundle.logit_r_neg;
  if (rp.empty() || rp.shape() != rn.shape()) {
    throw StateError("logit calibration needs logit relations for both pairs");
  }
  const std::size_t n = rp.numel();
  T sum = T(0);
  for (std::size_t j = 0; j < n; ++j) sum += rp[j] - rn[j];
  if (grad) {
    for (std::size_t j = 0; j < n; ++j) {
      grad->logit_r_pos[j] += sigma / static_cast<T>(n);
      grad->logit_r_neg[j] -= sigma / static_cast<T>(n);
    }
  }
  return sigma * sum / static_cast<T>(n);
}

template <typename T>
T task_loss(const Tensor<T> &logits, const std::vector<int> &labels, OutputGrads<T> *grad) {
  if (logits.rank() != 2) throw ShapeError("task loss expects [N, K] logits");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  check_labels(labels, n, classes, "task loss");
  std::vector<T> target(classes);
  T sum = T(0);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(target.begin(), target.end(), T(0));
    target[static_cast<std::size_t>(labels[j])] = T(1);
    sum += cross_entropy_soft<T>(logits.row(j), target, grad_row(grad ? &grad->logits : nullptr, j),
                                 T(1) / static_cast<T>(n));
  }
  return sum / static_cast<T>(n);
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> handcrafted_relations(const Tensor<T> &pooled) {
  if (pooled.rank() != 2 || pooled.dim(0) % 3 != 0) {
    throw ShapeError("handcrafted relations expect [3T, C] pooled features, got " +
                     shape_str(pooled.shape()));
  }
  const std::size_t t = pooled.dim(0) / 3;
  std::vector<T> rp(t), rn(t);
  auto dist = [&](std::size_t a, std::size_t b) {
    T acc = T(0);
    auto ra = pooled.row(a);
    auto rb = pooled.row(b);
    for (std::size_t c = 0; c < ra.size(); ++c) acc += (ra[c] - rb[c]) * (ra[c] - rb[c]);
    return std::sqrt(acc);
  };
  for (std::size_t j = 0; j < t; ++j) {
    rp[j] = dist(3 * j, 3 * j + 1);
    rn[j] = dist(3 * j, 3 * j + 2);
  }
  return {rp, rn};
}

template <typename T>
T handcrafted_rd_loss(const std::vector<Tensor<T>> &pooled, T beta, OutputGrads<T> *grad,
                      const TeacherSnapshot<T> *teacher) {
  const std::size_t k = pooled.size();
  require_depth<T>(k, "handcrafted relation distillation");
  std::vector<T> tp, tn;
  if (teacher) {
    tp = teacher->hc_pos;
    tn = teacher->hc_neg;
  } else {
    std::tie(tp, tn) = handcrafted_relations(pooled.back());
  }
  T total = T(0);
  for (std::size_t d = 0; d + 1 < k; ++d) {
    const auto [rp, rn] = handcrafted_relations(pooled[d]);
    const std::size_t n = rp.size();
    if (tp.size() != n) throw ShapeError("handcrafted teacher size mismatch");
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T dp = rp[j] - tp[j];
      const T dn = rn[j] - tn[j];
      sum += dp * dp + dn * dn;
      if (!grad) continue;
      // d r(a,b) / d g_a = (g_a - g_b) / r, zero at r = 0.
      auto push = [&](std::size_t a, std::size_t b, T r, T coeff) {
        if (r <= T(0)) return;
        auto ga = pooled[d].row(a);
        auto gb = pooled[d].row(b);
        auto da = grad->pooled[d].row(a);
        auto db = grad->pooled[d].row(b);
        for (std::size_t c = 0; c < ga.size(); ++c) {
          const T v = coeff * (ga[c] - gb[c]) / r;
          da[c] += v;
          db[c] -= v;
        }
      };
      const T scale = T(2) * beta / static_cast<T>(n);
      push(3 * j, 3 * j + 1, rp[j], scale * dp);
      push(3 * j, 3 * j + 2, rn[j], scale * dn);
    }
    total += sum / static_cast<T>(n);
  }
  return beta * total;
}

template <typename T>
LossBreakdown total_loss(const StepOutputs<T> &out, const TorsdConfig &cfg, OutputGrads<T> *grad,
                         const TeacherSnapshot<T> *teacher) {
  LossBreakdown b;
  b.task = static_cast<double>(task_loss(out.features.logits, [&] {
    std::vector<int> rows;
    rows.reserve(3 * out.triplets());
    for (std::size_t t = 0; t < out.triplets(); ++t) {
      rows.push_back(out.y_o[t]);
      rows.push_back(out.y_p[t]);
      rows.push_back(out.y_n[t]);
    }
    return rows;
  }(), grad));
  b.total = b.task;
  const T temp = static_cast<T>(cfg.kl_temperature);
  if (cfg.enable_rn) {
    b.triplet = static_cast<double>(
        triplet_loss(out.relations, static_cast<T>(cfg.alpha), static_cast<T>(cfg.margin), grad));
    b.rd = static_cast<double>(
        relation_distill_loss(out.relations, static_cast<T>(cfg.beta), grad, teacher));
    b.total += b.triplet + b.rd;
  }
  if (cfg.enable_ac) {
    const T gp = static_cast<T>(cfg.gamma_p), gn = static_cast<T>(cfg.gamma_n);
    const T lam = static_cast<T>(cfg.lambda_mix);
    b.pat = static_cast<double>(pat_loss(out.aux, out.y_p, gp, lam, grad));
    b.pld = static_cast<double>(pld_loss(out.aux, gp, lam, temp, grad, teacher));
    b.nat = static_cast<double>(nat_loss(out.aux, out.y_o, out.y_n, gn, lam, grad));
    b.nld = static_cast<double>(nld_loss(out.aux, gn, lam, temp, grad, teacher));
    b.total += b.pat + b.pld + b.nat + b.nld;
  }
  if (cfg.enable_ld) {
    b.logit_cal = static_cast<double>(
        logit_calibration_loss(out.relations, static_cast<T>(cfg.sigma), grad));
    b.total += b.logit_cal;
  }
  if (cfg.enable_handcrafted_rd) {
    b.handcrafted_rd = static_cast<double>(
        handcrafted_rd_loss(out.pooled, static_cast<T>(cfg.beta), grad, teacher));
    b.total += b.handcrafted_rd;
  }
  return b;
}

#define TORSD_INSTANTIATE(T)                                                                  \
  template struct OutputGrads<T>;                                                             \
  template struct TeacherSnapshot<T>;                                                         \
  template T cross_entropy_soft(std::span<const T>, std::span<const T>, std::span<T>, T);    \
  template T kl_divergence(std::span<const T>, std::span<const T>, T, std::span<T>, T);      \
  template std::vector<T> make_soft_label<T>(int, int, std::size_t);                          \
  template T triplet_loss(const RelationBundle<T> &, T, T, OutputGrads<T> *);                 \
  template T relation_distill_loss(const RelationBundle<T> &, T, OutputGrads<T> *,            \
                                   const TeacherSnapshot<T> *);                               \
  template T pat_loss(const AuxOutputs<T> &, const std::vector<int> &, T, T, OutputGrads<T> *); \
  template T pld_loss(const AuxOutputs<T> &, T, T, T, OutputGrads<T> *,                       \
                      const TeacherSnapshot<T> *);                                            \
  template T nat_loss(const AuxOutputs<T> &, const std::vector<int> &,                        \
                      const std::vector<int> &, T, T, OutputGrads<T> *);                      \
  template T nld_loss(const AuxOutputs<T> &, T, T, T, OutputGrads<T> *,                       \
                      const TeacherSnapshot<T> *);                                            \
  template T logit_calibration_loss(const RelationBundle<T> &, T, OutputGrads<T> *);          \
  template T task_loss(const Tensor<T> &, const std::vector<int> &, OutputGrads<T> *);        \
  template std::pair<std::vector<T>, std::vector<T>> handcrafted_relations(const Tensor<T> &); \
  template T handcrafted_rd_loss(const std::vector<Tensor<T>> &, T, OutputGrads<T> *,         \
                                 const TeacherSnapshot<T> *);                                 \
  template LossBreakdown total_loss(const StepOutputs<T> &, const TorsdConfig &,              \
                                    OutputGrads<T> *, const TeacherSnapshot<T> *);

TORSD_INSTANTIATE(float)
TORSD_INSTANTIATE(double)

#undef TORSD_INSTANTIATE

} // namespace torsd

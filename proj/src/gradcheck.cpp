// SPDX-License-Identifier: Apache-2.0
#include "torsd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "torsd/losses.hpp"
#include "torsd/rng.hpp"

namespace torsd {
namespace {

constexpr std::size_t kSide = 16;
constexpr std::size_t kWidth = 4;
constexpr std::size_t kEmbed = 4;
constexpr std::size_t kClasses = 2;

} // namespace

GradcheckProblem tiny_gradcheck_problem(std::uint64_t seed) {
  BackboneSpec spec{BackboneKind::toy_cnn, kClasses, kWidth, 3, kSide, kSide};
  GradcheckProblem p{TorsdModel<double>(spec, kEmbed, seed), Tensor<double>({3, 3, kSide, kSide}),
                     {0}, {0}, {1}};
  std::mt19937_64 rng(derive_seed(seed, 7));
  std::normal_distribution<double> pixel(0.0, 1.0);
  for (double &v : p.images.values()) v = pixel(rng);
  if (rng() & 1) {
    p.y_o = {1};
    p.y_p = {1};
    p.y_n = {0};
  }
  return p;
}

GradcheckReport gradcheck(GradcheckProblem &problem, const TorsdConfig &cfg,
                          const GradcheckOptions &options) {
  auto &model = problem.model;
  model.zero_grad();
  const StepOutputs<double> out =
      model.forward(problem.images, problem.y_o, problem.y_p, problem.y_n, cfg, true);
  const TeacherSnapshot<double> teacher = TeacherSnapshot<double>::capture(out);
  OutputGrads<double> grads = OutputGrads<double>::zeros_like(out);
  total_loss(out, cfg, &grads);
  model.backward(out, grads);

  auto loss_at = [&]() {
    const StepOutputs<double> o =
        model.forward(problem.images, problem.y_o, problem.y_p, problem.y_n, cfg, true);
    return total_loss(o, cfg, static_cast<OutputGrads<double> *>(nullptr), &teacher).total;
  };

  GradcheckReport report;
  for (const auto &np : model.parameters()) {
    GroupError g;
    g.name = np.name;
    g.size = np.param->value.numel();
    for (std::size_t i = 0; i < g.size; ++i) {
      double &w = np.param->value[i];
      const double saved = w;
      w = saved + options.step;
      const double up = loss_at();
      w = saved - options.step;
      const double down = loss_at();
      w = saved;
      const double numeric = (up - down) / (2 * options.step);
      const double analytic = np.param->grad[i];
      if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
        g.finite = false;
        continue;
      }
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      g.max_abs_err = std::max(g.max_abs_err, abs_err);
      g.max_rel_err = std::max(g.max_rel_err, abs_err / denom);
    }
    report.max_rel_err = std::max(report.max_rel_err, g.max_rel_err);
    report.finite = report.finite && g.finite;
    report.groups.push_back(std::move(g));
  }
  return report;
}

std::vector<TeacherPathGradient> teacher_path_gradients(GradcheckProblem &problem,
                                                        const TorsdConfig &cfg) {
  TorsdConfig c = cfg;
  c.enable_rn = true;
  c.enable_ac = true;
  auto &model = problem.model;
  model.zero_grad();
  const StepOutputs<double> out =
      model.forward(problem.images, problem.y_o, problem.y_p, problem.y_n, c, true);
  OutputGrads<double> grads = OutputGrads<double>::zeros_like(out);
  const auto temp = static_cast<double>(c.kl_temperature);
  relation_distill_loss(out.relations, c.beta, &grads);
  pld_loss(out.aux, c.gamma_p, c.lambda_mix, temp, &grads);
  nld_loss(out.aux, c.gamma_n, c.lambda_mix, temp, &grads);
  model.backward(out, grads);

  const std::string k = std::to_string(model.backbone().depth());
  const std::vector<std::string> prefixes{"backbone.block" + k + ".", "rn." + k + ".",
                                          "aux." + k + "."};
  std::vector<TeacherPathGradient> result;
  for (const auto &np : model.parameters()) {
    const bool deepest = std::any_of(prefixes.begin(), prefixes.end(), [&](const auto &p) {
      return np.name.rfind(p, 0) == 0;
    });
    if (!deepest) continue;
    TeacherPathGradient t{np.name, 0.0};
    for (double g : np.param->grad.values()) t.max_abs_grad = std::max(t.max_abs_grad, std::abs(g));
    result.push_back(t);
  }
  return result;
}

} // namespace torsd

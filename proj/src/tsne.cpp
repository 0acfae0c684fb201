// SPDX-License-Identifier: Apache-2.0
#include "torsd/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "torsd/errors.hpp"

namespace torsd {
namespace {

// Row-conditional affinities p_{j|i} whose entropy matches log(perplexity),
// found by bisection on the Gaussian precision.
std::vector<double> conditional_affinities(const std::vector<double> &d2, std::size_t n,
                                           double perplexity) {
  std::vector<double> p(n * n, 0.0);
  const double target = std::log(perplexity);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    const double *row = d2.data() + i * n;
    double *out = p.data() + i * n;
    double min_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) min_d = std::min(min_d, row[j]);
    }
    for (int iter = 0; iter < 200; ++iter) {
      double sum = 0, weighted = 0;
      for (std::size_t j = 0; j < n; ++j) {
        out[j] = j == i ? 0.0 : std::exp(-beta * (row[j] - min_d));
        sum += out[j];
        weighted += out[j] * (row[j] - min_d);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
  }
  return p;
}

} // namespace

std::vector<std::array<double, 2>> embed_2d(const DepthFeatureSet &features,
                                            const TsneOptions &options) {
  const std::size_t n = features.size();
  if (n < 5) throw ArgumentError("t-SNE needs at least 5 samples, got " + std::to_string(n));
  const std::size_t dim = features.features.dim(1);

  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = features.features.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto b = features.features.row(j);
      double acc = 0;
      for (std::size_t c = 0; c < dim; ++c) acc += (a[c] - b[c]) * (a[c] - b[c]);
      d2[i * n + j] = d2[j * n + i] = acc;
    }
  }
  const double perplexity = std::min(options.perplexity, static_cast<double>(n - 1) / 3.0);
  std::vector<double> p = conditional_affinities(d2, n, perplexity);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * n), 1e-12);
      p[i * n + j] = p[j * n + i] = s;
    }
  }

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> init(0.0, 1e-4);
  std::vector<double> y(2 * n), update(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n);
  for (double &v : y) v = init(rng);
  std::vector<double> q(n * n);

  for (std::size_t it = 0; it < options.iterations; ++it) {
    const double exaggeration = it < options.exaggeration_iters ? options.early_exaggeration : 1.0;
    const double momentum = it < options.exaggeration_iters ? 0.5 : 0.8;
    double qsum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
        const double w = 1.0 / (1.0 + dx * dx + dy * dy);
        q[i * n + j] = q[j * n + i] = w;
        qsum += 2 * w;
      }
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = q[i * n + j];
        const double coeff = 4.0 * (exaggeration * p[i * n + j] - w / qsum) * w;
        grad[2 * i] += coeff * (y[2 * i] - y[2 * j]);
        grad[2 * i + 1] += coeff * (y[2 * i + 1] - y[2 * j + 1]);
      }
    }
    for (std::size_t k = 0; k < 2 * n; ++k) {
      const bool same_sign = (grad[k] > 0) == (update[k] > 0);
      gains[k] = std::max(same_sign ? gains[k] * 0.8 : gains[k] + 0.2, 0.01);
      update[k] = momentum * update[k] - options.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
  }

  std::vector<std::array<double, 2>> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {y[2 * i], y[2 * i + 1]};
  return out;
}

} // namespace torsd

// SPDX-License-Identifier: Apache-2.0
#include "torsd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "torsd/errors.hpp"

namespace torsd {
namespace {

void gratings_image(std::vector<float> &img, std::size_t s, int label, const SyntheticSpec &spec,
                    std::mt19937_64 &rng) {
  const double pi = std::numbers::pi;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double classes = static_cast<double>(spec.num_classes);
  const double angle = pi * label / classes + spec.angle_jitter * gauss(rng);
  const double freq = 2 * pi / (5.0 + 3.0 * unit(rng));
  const double phase = 2 * pi * unit(rng);
  const double contrast = 0.25 + 0.25 * unit(rng);
  // Hue leans toward the class but is mixed with a random one.
  const double hue = 2 * pi * (0.6 * label / classes + 0.4 * unit(rng));
  const double tint[3] = {0.5 + 0.5 * std::cos(hue), 0.5 + 0.5 * std::cos(hue - 2 * pi / 3),
                          0.5 + 0.5 * std::cos(hue + 2 * pi / 3)};
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double disc_y = unit(rng) * s, disc_x = unit(rng) * s, disc_r = 3 + 4 * unit(rng);
  const double disc_v = unit(rng);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double wave = std::sin(freq * (ca * x + sa * y) + phase);
      const bool in_disc = std::hypot(y - disc_y, x - disc_x) < disc_r;
      for (std::size_t c = 0; c < 3; ++c) {
        double v = 0.5 + contrast * wave * (0.4 + 0.6 * tint[c]);
        if (in_disc) v = disc_v;
        v += spec.noise * gauss(rng);
        img[(c * s + y) * s + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

void blobs_image(std::vector<float> &img, std::size_t s, int label, const SyntheticSpec &spec,
                 std::mt19937_64 &rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double half = s / 2.0;
  const double cy = (label / 2 % 2 == 0 ? 0.5 : 1.5) * half;
  const double cx = (label % 2 == 0 ? 0.5 : 1.5) * half;
  const double r = s / 5.0;
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double base = std::hypot(y - cy, x - cx) < r ? 0.9 : 0.2;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = base + spec.noise * gauss(rng);
        img[(c * s + y) * s + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

} // namespace

LabeledDataset make_synthetic(const SyntheticSpec &spec) {
  if (spec.num_classes < 2) throw ArgumentError("synthetic data needs at least 2 classes");
  if (spec.kind == SyntheticKind::blobs && spec.num_classes > 4) {
    throw ArgumentError("blob data supports at most 4 classes");
  }
  if (spec.per_class < 1 || spec.size < 8) throw ArgumentError("synthetic data is too small");
  LabeledDataset ds;
  ds.channels = 3;
  ds.height = ds.width = spec.size;
  ds.num_classes = spec.num_classes;
  ds.id = std::string(spec.kind == SyntheticKind::blobs ? "synthetic-blobs" : "synthetic-gratings") +
          ":classes=" + std::to_string(spec.num_classes) +
          ",per_class=" + std::to_string(spec.per_class) + ",seed=" + std::to_string(spec.seed);
  std::mt19937_64 rng(spec.seed);
  const std::size_t n = spec.num_classes * spec.per_class;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % spec.num_classes);
    std::vector<float> img(ds.image_size());
    if (spec.kind == SyntheticKind::blobs) {
      blobs_image(img, spec.size, label, spec, rng);
    } else {
      gratings_image(img, spec.size, label, spec, rng);
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

} // namespace torsd

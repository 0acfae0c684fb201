// SPDX-License-Identifier: Apache-2.0
#include "torsd/triplet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "torsd/errors.hpp"

namespace torsd {

TripletPlan plan_triplets(const std::vector<std::size_t> &counts) {
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  // t triplets are feasible iff per-class pair/single uses (p_c, s_c) exist
  // with 2p_c + s_c <= n_c, p_c + s_c <= t and sum p = sum s = t. Capacity for
  // singles falls by 1 per pair while t - p_c binds and by 2 after, so the
  // cheapest pairs are taken first.
  auto try_plan = [&](std::size_t t) -> std::optional<TripletPlan> {
    TripletPlan plan{t, std::vector<std::size_t>(counts.size(), 0),
                     std::vector<std::size_t>(counts.size(), 0)};
    std::size_t need = t;
    for (int cost = 1; cost <= 2 && need > 0; ++cost) {
      for (std::size_t c = 0; c < counts.size() && need > 0; ++c) {
        const std::size_t n = counts[c];
        const std::size_t cap = std::min(n / 2, t);
        const std::size_t cheap = n > t ? std::min(n - t, cap) : 0;
        const std::size_t room = cost == 1 ? cheap - plan.pairs[c] : cap - plan.pairs[c];
        const std::size_t take = std::min(room, need);
        plan.pairs[c] += take;
        need -= take;
      }
    }
    if (need > 0) return std::nullopt;
    std::size_t single_capacity = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      plan.singles[c] = std::min(counts[c] - 2 * plan.pairs[c], t - plan.pairs[c]);
      single_capacity += plan.singles[c];
    }
    if (single_capacity < t) return std::nullopt;
    std::size_t excess = single_capacity - t;
    for (std::size_t c = 0; c < counts.size() && excess > 0; ++c) {
      const std::size_t cut = std::min(excess, plan.singles[c]);
      plan.singles[c] -= cut;
      excess -= cut;
    }
    return plan;
  };
  for (std::size_t t = total / 3; t > 0; --t) {
    if (auto plan = try_plan(t)) return *plan;
  }
  return {0, std::vector<std::size_t>(counts.size(), 0), std::vector<std::size_t>(counts.size(), 0)};
}

EpochTriplets sample_epoch_triplets(const std::vector<int> &labels, std::size_t num_classes,
                                    std::mt19937_64 &rng) {
  if (labels.size() < 3) {
    throw SamplingInfeasibleError("need at least 3 images to form a triplet, got " +
                                  std::to_string(labels.size()));
  }
  std::vector<std::vector<std::size_t>> pools(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DataError("label out of range at index " + std::to_string(i));
    }
    pools[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  const auto populated =
      std::count_if(pools.begin(), pools.end(), [](const auto &p) { return !p.empty(); });
  if (populated < 2) {
    throw SamplingInfeasibleError("all images share one class; no negative exists");
  }
  if (std::none_of(pools.begin(), pools.end(), [](const auto &p) { return p.size() >= 2; })) {
    throw SamplingInfeasibleError("no class has two images; no positive pair exists");
  }
  for (auto &pool : pools) std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> counts(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) counts[c] = pools[c].size();

  const TripletPlan plan = plan_triplets(counts);
  std::vector<std::size_t> pairs = plan.pairs, singles = plan.singles;

  std::vector<std::size_t> tie_order(num_classes);
  std::iota(tie_order.begin(), tie_order.end(), 0);
  std::shuffle(tie_order.begin(), tie_order.end(), rng);

  // Each step must use every class whose remaining demand equals the number
  // of triplets left; serving the largest demands first guarantees that.
  auto largest = [&](auto &&eligible, std::size_t exclude) -> std::optional<std::size_t> {
    std::optional<std::size_t> best;
    for (std::size_t c : tie_order) {
      if (c == exclude || !eligible(c)) continue;
      if (!best || pairs[c] + singles[c] > pairs[*best] + singles[*best]) best = c;
    }
    return best;
  };
  auto has_pair = [&](std::size_t c) { return pairs[c] > 0; };
  auto has_single = [&](std::size_t c) { return singles[c] > 0; };

  EpochTriplets out;
  out.triplets.reserve(plan.triplets);
  for (std::size_t left = plan.triplets; left > 0; --left) {
    const std::size_t lead = *largest([&](std::size_t c) { return has_pair(c) || has_single(c); },
                                      num_classes);
    std::size_t pair_class, neg_class;
    if (pairs[lead] > 0) {
      pair_class = lead;
      neg_class = *largest(has_single, lead);
    } else {
      neg_class = lead;
      pair_class = *largest(has_pair, lead);
    }
    --pairs[pair_class];
    --singles[neg_class];
    auto &pp = pools[pair_class];
    auto &np = pools[neg_class];
    out.triplets.push_back({pp[pp.size() - 1], pp[pp.size() - 2], np.back()});
    pp.resize(pp.size() - 2);
    np.pop_back();
  }
  std::shuffle(out.triplets.begin(), out.triplets.end(), rng);
  out.dropped = labels.size() - 3 * out.triplets.size();
  return out;
}

EpochTriplets sample_epoch_triplets(const LabeledDataset &dataset, std::mt19937_64 &rng) {
  return sample_epoch_triplets(dataset.labels, dataset.num_classes, rng);
}

std::vector<std::string> check_partition(const std::vector<int> &labels,
                                         const EpochTriplets &epoch) {
  std::vector<std::string> problems;
  std::vector<bool> used(labels.size(), false);
  for (std::size_t t = 0; t < epoch.triplets.size(); ++t) {
    const auto &tr = epoch.triplets[t];
    const std::string where = "triplet " + std::to_string(t);
    bool in_range = true;
    for (std::size_t idx : {tr.anchor, tr.positive, tr.negative}) {
      if (idx >= labels.size()) {
        problems.push_back(where + ": index " + std::to_string(idx) + " out of range");
        in_range = false;
      } else if (used[idx]) {
        problems.push_back(where + ": index " + std::to_string(idx) + " used twice");
      } else {
        used[idx] = true;
      }
    }
    if (!in_range) continue;
    if (labels[tr.anchor] != labels[tr.positive]) {
      problems.push_back(where + ": positive label differs from anchor");
    }
    if (labels[tr.anchor] == labels[tr.negative]) {
      problems.push_back(where + ": negative label equals anchor");
    }
  }
  if (3 * epoch.triplets.size() + epoch.dropped != labels.size()) {
    problems.push_back("3 x " + std::to_string(epoch.triplets.size()) + " triplets + " +
                       std::to_string(epoch.dropped) + " dropped != " +
                       std::to_string(labels.size()) + " images");
  }
  return problems;
}

std::size_t crop_padding(std::size_t height) { return height / 8; }
std::size_t cutout_side(std::size_t height) { return height / 4; }

std::size_t apply_cutout(std::vector<float> &image, std::size_t channels, std::size_t height,
                         std::size_t width, std::size_t cy, std::size_t cx, std::size_t side) {
  const long half = static_cast<long>(side / 2);
  const long y0 = std::max(0L, static_cast<long>(cy) - half);
  const long y1 = std::min(static_cast<long>(height), static_cast<long>(cy) - half + static_cast<long>(side));
  const long x0 = std::max(0L, static_cast<long>(cx) - half);
  const long x1 = std::min(static_cast<long>(width), static_cast<long>(cx) - half + static_cast<long>(side));
  if (y1 <= y0 || x1 <= x0) return 0;
  for (std::size_t c = 0; c < channels; ++c) {
    for (long y = y0; y < y1; ++y) {
      for (long x = x0; x < x1; ++x) {
        image[(c * height + static_cast<std::size_t>(y)) * width + static_cast<std::size_t>(x)] = 0.0f;
      }
    }
  }
  return static_cast<std::size_t>((y1 - y0) * (x1 - x0));
}

std::vector<float> augment(const std::vector<float> &image, std::size_t channels,
                           std::size_t height, std::size_t width, bool training,
                           std::mt19937_64 &rng) {
  if (image.size() != channels * height * width) {
    throw ShapeError("augment: image has " + std::to_string(image.size()) + " values, expected " +
                     std::to_string(channels * height * width));
  }
  if (!std::all_of(image.begin(), image.end(), [](float v) { return std::isfinite(v); })) {
    throw InvalidImageError("image contains non-finite pixels");
  }
  if (!training) return image;

  const std::size_t pad = crop_padding(height);
  std::uniform_int_distribution<std::size_t> offset(0, 2 * pad);
  const long dy = static_cast<long>(offset(rng)) - static_cast<long>(pad);
  const long dx = static_cast<long>(offset(rng)) - static_cast<long>(pad);
  const bool flip = std::bernoulli_distribution(0.5)(rng);

  std::vector<float> out(image.size(), 0.0f);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      const long sy = static_cast<long>(y) + dy;
      if (sy < 0 || sy >= static_cast<long>(height)) continue;
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t fx = flip ? width - 1 - x : x;
        const long sx = static_cast<long>(fx) + dx;
        if (sx < 0 || sx >= static_cast<long>(width)) continue;
        out[(c * height + y) * width + x] =
            image[(c * height + static_cast<std::size_t>(sy)) * width + static_cast<std::size_t>(sx)];
      }
    }
  }
  std::uniform_int_distribution<std::size_t> cy(0, height - 1), cx(0, width - 1);
  const std::size_t hole_y = cy(rng);
  const std::size_t hole_x = cx(rng);
  apply_cutout(out, channels, height, width, hole_y, hole_x, cutout_side(height));
  return out;
}

std::vector<int> TripletBatch::row_labels() const {
  std::vector<int> out;
  out.reserve(3 * triplets());
  for (std::size_t t = 0; t < triplets(); ++t) {
    out.push_back(y_o[t]);
    out.push_back(y_p[t]);
    out.push_back(y_n[t]);
  }
  return out;
}

std::vector<std::size_t> role_rows(std::size_t triplets, Role role) {
  std::vector<std::size_t> rows(triplets);
  for (std::size_t t = 0; t < triplets; ++t) rows[t] = 3 * t + static_cast<std::size_t>(role);
  return rows;
}

TripletBatchStream::TripletBatchStream(const LabeledDataset &dataset,
                                       std::vector<TripletIndex> triplets, std::size_t batch_size,
                                       BatchTransform transform)
    : dataset_(dataset), triplets_(std::move(triplets)), per_batch_(batch_size / 3),
      transform_(transform), rng_(transform.seed) {
  if (batch_size == 0 || batch_size % 3 != 0) {
    throw ConfigValidationError("batch_size must be a positive multiple of 3 (got " +
                                    std::to_string(batch_size) + ")",
                                "batch_size");
  }
}

std::size_t TripletBatchStream::num_batches() const {
  return (triplets_.size() + per_batch_ - 1) / per_batch_;
}

std::optional<TripletBatch> TripletBatchStream::next() {
  if (cursor_ >= triplets_.size()) return std::nullopt;
  const std::size_t end = std::min(triplets_.size(), cursor_ + per_batch_);
  const std::size_t count = end - cursor_;
  const std::size_t isz = dataset_.image_size();
  TripletBatch batch;
  batch.images = Tensor<float>({3 * count, dataset_.channels, dataset_.height, dataset_.width});
  std::size_t row = 0;
  for (std::size_t t = cursor_; t < end; ++t) {
    const auto &tri = triplets_[t];
    for (std::size_t idx : {tri.anchor, tri.positive, tri.negative}) {
      std::vector<float> img = dataset_.images.at(idx);
      if (transform_.stats) {
        normalize_image(img, *transform_.stats, dataset_.height, dataset_.width);
      }
      img = augment(img, dataset_.channels, dataset_.height, dataset_.width, transform_.augment,
                    rng_);
      std::copy(img.begin(), img.end(), batch.images.data() + row * isz);
      ++row;
    }
    batch.y_o.push_back(dataset_.labels[tri.anchor]);
    batch.y_p.push_back(dataset_.labels[tri.positive]);
    batch.y_n.push_back(dataset_.labels[tri.negative]);
  }
  cursor_ = end;
  return batch;
}

std::vector<TripletBatch> assemble_batches(const std::vector<TripletIndex> &triplets,
                                           const LabeledDataset &dataset,
                                           std::size_t batch_size, BatchTransform transform) {
  TripletBatchStream stream(dataset, triplets, batch_size, transform);
  std::vector<TripletBatch> out;
  while (auto b = stream.next()) out.push_back(std::move(*b));
  return out;
}

Tensor<float> stack_images(const LabeledDataset &dataset, std::size_t begin, std::size_t end,
                           const ChannelStats *stats) {
  const std::size_t isz = dataset.image_size();
  Tensor<float> out({end - begin, dataset.channels, dataset.height, dataset.width});
  for (std::size_t i = begin; i < end; ++i) {
    std::vector<float> img = dataset.images.at(i);
    if (stats) normalize_image(img, *stats, dataset.height, dataset.width);
    std::copy(img.begin(), img.end(), out.data() + (i - begin) * isz);
  }
  return out;
}

} // namespace torsd

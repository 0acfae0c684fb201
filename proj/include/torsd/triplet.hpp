// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "torsd/dataset.hpp"
#include "torsd/tensor.hpp"

namespace torsd {

/// (anchor, positive, negative) dataset indices. label(anchor) ==
/// label(positive) != label(negative); all three distinct.
struct TripletIndex {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;

  bool operator==(const TripletIndex &) const = default;
};

struct EpochTriplets {
  std::vector<TripletIndex> triplets;
  /// Images left out this epoch (remainder and class-structure strays).
  std::size_t dropped = 0;
};

/// How many (anchor, positive) pairs and negatives each class contributes to
/// an epoch of the largest possible number of disjoint triplets.
struct TripletPlan {
  std::size_t triplets = 0;
  std::vector<std::size_t> pairs;
  std::vector<std::size_t> singles;
};

/// Maximum-cardinality plan for the given class counts.
TripletPlan plan_triplets(const std::vector<std::size_t> &counts);

/// Partitions the dataset into disjoint triplets so every image is used at
/// most once in the epoch.
///
/// Construction: each class's indices are shuffled into a pool, the class
/// contributions come from plan_triplets, and triplets are formed by always
/// drawing from the classes with the largest remaining demand (ties broken
/// by a per-call random class order). Images outside the plan are dropped
/// and counted. The resulting list is shuffled.
///
/// Throws SamplingInfeasibleError for fewer than 3 images or a single
/// populated class.
EpochTriplets sample_epoch_triplets(const LabeledDataset &dataset, std::mt19937_64 &rng);

/// Same partition on bare labels; used by the sampler and by property tests.
EpochTriplets sample_epoch_triplets(const std::vector<int> &labels, std::size_t num_classes,
                                    std::mt19937_64 &rng);

/// Problems with an epoch partition: label constraints, repeated indices,
/// out-of-range indices and 3 * |triplets| + dropped != labels.size().
/// Empty when the partition is valid.
std::vector<std::string> check_partition(const std::vector<int> &labels,
                                         const EpochTriplets &epoch);

/// Random-crop padding for a given height (4 for 32x32 inputs).
std::size_t crop_padding(std::size_t height);
/// Cutout hole side for a given height (H / 4).
std::size_t cutout_side(std::size_t height);

/// Zero a side x side square centred at (cy, cx), clipped to the image.
/// Returns the number of pixel positions zeroed (per channel).
std::size_t apply_cutout(std::vector<float> &image, std::size_t channels, std::size_t height,
                         std::size_t width, std::size_t cy, std::size_t cx, std::size_t side);

/// Training: zero-padded random crop, horizontal flip with p=0.5, then one
/// cutout hole. Eval: returns the input unchanged. Throws InvalidImageError
/// for non-finite pixels.
std::vector<float> augment(const std::vector<float> &image, std::size_t channels,
                           std::size_t height, std::size_t width, bool training,
                           std::mt19937_64 &rng);

/// Images in triple-major layout [a0, p0, n0, a1, p1, n1, ...] as
/// [3T, C, H, W]; role r of triplet t lives at row 3t + r.
struct TripletBatch {
  Tensor<float> images;
  std::vector<int> y_o;
  std::vector<int> y_p;
  std::vector<int> y_n;

  std::size_t triplets() const { return y_o.size(); }
  /// Hard labels in row order (3T entries).
  std::vector<int> row_labels() const;
};

enum class Role : std::size_t { anchor = 0, positive = 1, negative = 2 };

/// Row indices of one role inside a triple-major batch of `triplets` triplets.
std::vector<std::size_t> role_rows(std::size_t triplets, Role role);

struct BatchTransform {
  const ChannelStats *stats = nullptr; // normalization; skipped when null
  bool augment = false;
  std::uint64_t seed = 0; // augmentation stream
};

/// Emits batches of batch_size / 3 triplets in order; the final batch may
/// hold fewer, but triplets are never split.
class TripletBatchStream {
public:
  TripletBatchStream(const LabeledDataset &dataset, std::vector<TripletIndex> triplets,
                     std::size_t batch_size, BatchTransform transform = {});

  std::optional<TripletBatch> next();
  std::size_t num_batches() const;

private:
  const LabeledDataset &dataset_;
  std::vector<TripletIndex> triplets_;
  std::size_t per_batch_;
  BatchTransform transform_;
  std::mt19937_64 rng_;
  std::size_t cursor_ = 0;
};

/// Drains a TripletBatchStream. Throws ConfigValidationError when
/// batch_size is not a positive multiple of 3.
std::vector<TripletBatch> assemble_batches(const std::vector<TripletIndex> &triplets,
                                           const LabeledDataset &dataset,
                                           std::size_t batch_size, BatchTransform transform = {});

/// Plain [N, C, H, W] batch of dataset images (normalized when stats given).
Tensor<float> stack_images(const LabeledDataset &dataset, std::size_t begin, std::size_t end,
                           const ChannelStats *stats);

} // namespace torsd

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace torsd {

/// Labeled images held in channel-major (C, H, W) float layout.
struct LabeledDataset {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 0;
  std::vector<std::vector<float>> images;
  std::vector<int> labels;
  std::string id;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }
};

/// Throws DataError when the dataset invariants do not hold: matching lengths,
/// labels in range, at least two classes and one class with two samples.
void validate_dataset(const LabeledDataset &ds);

/// Per-class sample counts.
std::vector<std::size_t> class_counts(const LabeledDataset &ds);

/// Subset in the given index order.
LabeledDataset subset(const LabeledDataset &ds, const std::vector<std::size_t> &indices);

/// Loads either a packed binary file or a directory holding `index.txt`
/// (lines: `<relative image path> <label>`) and binary PPM/PGM images.
/// Throws DataError on malformed or missing input, and on invariant
/// violations unless `validate` is false.
LabeledDataset load_dataset(const std::filesystem::path &path, bool validate = true);

/// Packed layout, little-endian: uint32 count, H, W, C, num_classes; then per
/// record H*W*C float32 pixels in H, W, C order followed by an int32 label.
void save_packed(const LabeledDataset &ds, const std::filesystem::path &path);
LabeledDataset load_packed(const std::filesystem::path &path, bool validate = true);

/// Writes `index.txt` plus one P6 (3 channels) or P5 (1 channel) image per
/// sample. Pixels are clamped to [0, 1] and quantized to 8 bits.
void save_image_directory(const LabeledDataset &ds, const std::filesystem::path &dir);

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> stddev;
};

/// Per-channel mean and standard deviation over every pixel of the split.
ChannelStats compute_channel_stats(const LabeledDataset &ds);

/// (x - mean_c) / std_c in place.
void normalize_image(std::vector<float> &image, const ChannelStats &stats, std::size_t height,
                     std::size_t width);

} // namespace torsd

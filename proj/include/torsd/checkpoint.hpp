// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "torsd/config.hpp"
#include "torsd/dataset.hpp"
#include "torsd/model.hpp"
#include "torsd/optimizer.hpp"

namespace torsd {

/// On-disk layout of a checkpoint directory:
///   manifest.txt  run manifest
///   state.txt     epoch=<completed epochs>, step=<global step>
///   index.txt     one `<name> <blob file>` line per tensor
///   <name>.bin    uint32 rank, rank x uint32 dims, float32 values, uint32
///                 FNV-1a checksum of the value bytes; all little-endian
///
/// Tensor names: model parameters and buffers, `norm.mean` / `norm.std`
/// (input normalization) and `opt.momentum.<param>` (optimizer state).
struct Checkpoint {
  RunManifest manifest;
  std::map<std::string, Tensor<float>> tensors;
  std::size_t epoch = 0;
  std::size_t step = 0;
};

void write_checkpoint(const std::filesystem::path &dir, const Checkpoint &ckpt);
/// Throws IoError for missing files and for blobs that fail to parse, naming
/// the offending tensor.
Checkpoint read_checkpoint(const std::filesystem::path &dir);

/// Captures weights, buffers, normalization and (optionally) optimizer state.
Checkpoint capture_checkpoint(TorsdModel<float> &model, const RunManifest &manifest,
                              const ChannelStats &stats, const Sgd<float> *optimizer,
                              std::size_t epoch, std::size_t step);

/// Copies every tensor the model owns out of `ckpt`. Throws IoError when one
/// is missing or has the wrong shape. Optimizer state is restored when
/// `optimizer` is non-null.
void restore_checkpoint(TorsdModel<float> &model, const Checkpoint &ckpt,
                        Sgd<float> *optimizer = nullptr);

/// Backbone, input normalization and manifest only; marks the manifest as
/// stripped. Idempotent.
Checkpoint strip_checkpoint(const Checkpoint &ckpt);

BackboneSpec backbone_spec(const RunManifest &manifest);
/// Full bundle rebuilt from a non-stripped checkpoint.
TorsdModel<float> model_from_checkpoint(const Checkpoint &ckpt);
/// Inference backbone from either a full or a stripped checkpoint.
TappedBackbone<float> backbone_from_checkpoint(const Checkpoint &ckpt);
ChannelStats stats_from_checkpoint(const Checkpoint &ckpt);

} // namespace torsd

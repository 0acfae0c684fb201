// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "torsd/checkpoint.hpp"
#include "torsd/config.hpp"
#include "torsd/dataset.hpp"
#include "torsd/errors.hpp"
#include "torsd/losses.hpp"
#include "torsd/model.hpp"
#include "torsd/optimizer.hpp"
#include "torsd/triplet.hpp"

namespace torsd {

/// A training step produced a non-finite loss; no update was applied.
class DivergenceError : public Error {
public:
  DivergenceError(const std::string &message, LossBreakdown breakdown)
      : Error(message), breakdown_(breakdown) {}
  const LossBreakdown &breakdown() const { return breakdown_; }

private:
  LossBreakdown breakdown_;
};

struct EvalReport {
  double accuracy = 0;            // top-1, in [0, 1]
  std::vector<double> per_class;  // accuracy per class (0 for absent classes)
  std::vector<std::size_t> class_counts;
  double loss = 0; // mean cross entropy
  std::size_t count = 0;
};

/// Top-1 accuracy and loss of the inference backbone. Throws ArgumentError
/// on an empty dataset.
EvalReport evaluate(TappedBackbone<float> &backbone, const LabeledDataset &dataset,
                    const ChannelStats &stats);
/// Evaluates strip_for_inference(model); training-time modules never run.
EvalReport evaluate(const TorsdModel<float> &model, const LabeledDataset &dataset,
                    const ChannelStats &stats);

struct TrainState {
  TorsdModel<float> model;
  Sgd<float> optimizer;
  std::size_t epoch = 0; // completed epochs
  std::size_t step = 0;  // completed steps
};

TrainState make_train_state(const BackboneSpec &spec, const TorsdConfig &cfg,
                            const OptimConfig &opt);

/// Forward, loss, backward and one SGD update at learning rate `lr`.
/// Throws DivergenceError (before touching the weights) when any loss term
/// is non-finite.
LossBreakdown train_step(TrainState &state, const TripletBatch &batch, const TorsdConfig &cfg,
                         double lr);

/// Plain cross-entropy step on the backbone alone; the reference the
/// all-toggles-off trainer must reproduce.
double reference_ce_step(TappedBackbone<float> &backbone, Sgd<float> &optimizer,
                         const TripletBatch &batch, double lr);

/// Triplet-sampler seed for one epoch.
std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch);

struct TrainOptions {
  BackboneSpec backbone; // class count and input geometry come from the dataset
  std::size_t checkpoint_every = 10;
  bool augment = true;
  /// Evaluated after every epoch; the training split when null.
  const LabeledDataset *eval_set = nullptr;
  /// Checkpoint directory to continue from; empty for a fresh run.
  std::filesystem::path resume_from;
  /// Stop after this many epochs in total (0: run all epochs). The schedule
  /// still spans the configured epoch count.
  std::size_t stop_after = 0;
  /// Called after every step with (step, lr, breakdown).
  std::function<void(std::size_t, double, const LossBreakdown &)> on_step;
};

struct TrainResult {
  TrainState state;
  ChannelStats stats;
  std::vector<EvalReport> history; // one per epoch run in this call
  std::filesystem::path last_checkpoint;
};

/// Full training loop. Writes `metrics.csv`, `eval.csv`, `manifest.txt`
/// and `ckpt_epoch_{e}/` under `out_dir`, or nothing when `out_dir` is
/// empty. On resume the logs are truncated to the checkpoint's step and
/// epoch before appending.
TrainResult train(const LabeledDataset &dataset, const TorsdConfig &cfg, const OptimConfig &opt,
                  const std::filesystem::path &out_dir, const TrainOptions &options);

} // namespace torsd

// SPDX-License-Identifier: Apache-2.0
#include "torsd/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "torsd/rng.hpp"

namespace torsd {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kEvalChunk = 256;
constexpr std::uint64_t kAugmentStream = 2;

std::string metrics_header() { return "step,lr," + LossBreakdown::csv_header(); }
std::string eval_header() { return "epoch,accuracy,loss"; }

// Keeps the header and every row whose first column is below `limit`.
void truncate_log(const fs::path &path, const std::string &header, std::size_t limit) {
  std::vector<std::string> keep{header};
  if (std::ifstream in(path); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) < limit) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto &l : keep) out << l << '\n';
}

std::ofstream open_append(const fs::path &path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

} // namespace

EvalReport evaluate(TappedBackbone<float> &backbone, const LabeledDataset &dataset,
                    const ChannelStats &stats) {
  if (dataset.size() == 0) throw ArgumentError("evaluate: empty dataset");
  const std::size_t classes = backbone.spec().num_classes;
  EvalReport report;
  report.count = dataset.size();
  report.per_class.assign(classes, 0.0);
  report.class_counts.assign(classes, 0);
  std::vector<std::size_t> correct_per_class(classes, 0);
  std::size_t correct = 0;
  double loss = 0;
  for (std::size_t begin = 0; begin < dataset.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(dataset.size(), begin + kEvalChunk);
    const Tensor<float> logits = backbone.forward(stack_images(dataset, begin, end, &stats), false);
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = logits.row(i - begin);
      const int label = dataset.labels[i];
      if (label < 0 || static_cast<std::size_t>(label) >= classes) {
        throw DataError("label " + std::to_string(label) + " outside the model's classes");
      }
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (row[c] > row[best]) best = c;
      }
      std::vector<float> target(classes, 0.0f);
      target[static_cast<std::size_t>(label)] = 1.0f;
      loss += cross_entropy_soft<float>(row, target);
      ++report.class_counts[static_cast<std::size_t>(label)];
      if (best == static_cast<std::size_t>(label)) {
        ++correct;
        ++correct_per_class[static_cast<std::size_t>(label)];
      }
    }
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  report.loss = loss / static_cast<double>(dataset.size());
  for (std::size_t c = 0; c < classes; ++c) {
    if (report.class_counts[c] > 0) {
      report.per_class[c] = static_cast<double>(correct_per_class[c]) /
                            static_cast<double>(report.class_counts[c]);
    }
  }
  return report;
}

EvalReport evaluate(const TorsdModel<float> &model, const LabeledDataset &dataset,
                    const ChannelStats &stats) {
  TappedBackbone<float> stripped = strip_for_inference(model);
  return evaluate(stripped, dataset, stats);
}

TrainState make_train_state(const BackboneSpec &spec, const TorsdConfig &cfg,
                            const OptimConfig &opt) {
  return TrainState{TorsdModel<float>(spec, cfg.embed_dim, cfg.seed),
                    Sgd<float>(static_cast<float>(opt.momentum),
                               static_cast<float>(opt.weight_decay),
                               static_cast<float>(opt.grad_clip)),
                    0, 0};
}

LossBreakdown train_step(TrainState &state, const TripletBatch &batch, const TorsdConfig &cfg,
                         double lr) {
  auto &model = state.model;
  model.zero_grad();
  const StepOutputs<float> out = model.forward(batch, cfg, true);
  OutputGrads<float> grads = OutputGrads<float>::zeros_like(out);
  const LossBreakdown loss = total_loss(out, cfg, &grads);
  if (!loss.finite()) {
    throw DivergenceError("non-finite loss at step " + std::to_string(state.step) + ": " +
                              LossBreakdown::csv_header() + " = " + loss.csv_row(),
                          loss);
  }
  model.backward(out, grads);
  state.optimizer.step(model.parameters(), static_cast<float>(lr));
  ++state.step;
  return loss;
}

double reference_ce_step(TappedBackbone<float> &backbone, Sgd<float> &optimizer,
                         const TripletBatch &batch, double lr) {
  ParamList<float> params;
  BufferList<float> buffers;
  backbone.collect(params, buffers);
  for (auto &p : params) p.param->zero_grad();
  const Tensor<float> logits = backbone.forward(batch.images, true);
  OutputGrads<float> grads;
  grads.logits = Tensor<float>(logits.shape());
  const float loss = task_loss(logits, batch.row_labels(), &grads);
  backbone.backward({}, grads.logits);
  optimizer.step(params, static_cast<float>(lr));
  return loss;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return seed ^ static_cast<std::uint64_t>(epoch);
}

TrainResult train(const LabeledDataset &dataset, const TorsdConfig &cfg, const OptimConfig &opt,
                  const fs::path &out_dir, const TrainOptions &options) {
  require_valid(cfg, opt);
  validate_dataset(dataset);

  BackboneSpec spec = options.backbone;
  spec.num_classes = dataset.num_classes;
  spec.channels = dataset.channels;
  spec.height = dataset.height;
  spec.width = dataset.width;

  RunManifest manifest;
  manifest.config = cfg;
  manifest.optim = opt;
  manifest.dataset_id = dataset.id;
  manifest.backbone_id = backbone_id(spec);
  manifest.num_classes = spec.num_classes;
  manifest.input_channels = spec.channels;
  manifest.input_height = spec.height;
  manifest.input_width = spec.width;
  manifest.start_time = utc_timestamp();
  manifest.version = kVersion;

  TrainResult result{make_train_state(spec, cfg, opt), compute_channel_stats(dataset), {}, {}};
  TrainState &state = result.state;

  if (!options.resume_from.empty()) {
    const Checkpoint ckpt = read_checkpoint(options.resume_from);
    if (ckpt.manifest.config != cfg || ckpt.manifest.optim != opt ||
        ckpt.manifest.backbone_id != manifest.backbone_id) {
      throw ConfigValidationError("resume checkpoint was written with a different configuration");
    }
    restore_checkpoint(state.model, ckpt, &state.optimizer);
    result.stats = stats_from_checkpoint(ckpt);
    state.epoch = ckpt.epoch;
    state.step = ckpt.step;
    manifest.start_time = ckpt.manifest.start_time;
  }

  // The schedule spans every epoch, so count all steps up front.
  const std::size_t per_batch = opt.batch_size / 3;
  std::vector<std::size_t> epoch_steps(opt.epochs);
  std::size_t total_steps = 0;
  for (std::size_t e = 0; e < opt.epochs; ++e) {
    std::mt19937_64 rng(epoch_seed(cfg.seed, e));
    const std::size_t t = sample_epoch_triplets(dataset.labels, dataset.num_classes, rng)
                              .triplets.size();
    epoch_steps[e] = (t + per_batch - 1) / per_batch;
    total_steps += epoch_steps[e];
  }

  const bool write = !out_dir.empty();
  const fs::path metrics_path = out_dir / "metrics.csv";
  const fs::path eval_path = out_dir / "eval.csv";
  if (write) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    if (std::ofstream m(out_dir / "manifest.txt", std::ios::trunc); !(m << serialize_manifest(manifest))) {
      throw IoError("cannot write " + (out_dir / "manifest.txt").string());
    }
    truncate_log(metrics_path, metrics_header(), state.step);
    truncate_log(eval_path, eval_header(), state.epoch + 1);
  }

  const std::size_t last_epoch =
      options.stop_after == 0 ? opt.epochs : std::min(opt.epochs, options.stop_after);
  const LabeledDataset &eval_set = options.eval_set ? *options.eval_set : dataset;

  for (std::size_t e = state.epoch; e < last_epoch; ++e) {
    std::mt19937_64 rng(epoch_seed(cfg.seed, e));
    EpochTriplets epoch = sample_epoch_triplets(dataset, rng);
    BatchTransform transform{&result.stats, options.augment,
                             derive_seed(epoch_seed(cfg.seed, e), kAugmentStream)};
    TripletBatchStream stream(dataset, std::move(epoch.triplets), opt.batch_size, transform);

    std::ofstream metrics;
    if (write) metrics = open_append(metrics_path);
    while (auto batch = stream.next()) {
      const double lr = scheduled_lr(opt, state.step, total_steps);
      const std::size_t step = state.step;
      const LossBreakdown loss = train_step(state, *batch, cfg, lr);
      if (write) {
        metrics << step << ',' << std::setprecision(9) << lr << ',' << loss.csv_row() << '\n';
        metrics.flush();
      }
      if (options.on_step) options.on_step(step, lr, loss);
    }
    state.epoch = e + 1;

    EvalReport report = evaluate(state.model, eval_set, result.stats);
    if (write) {
      auto ev = open_append(eval_path);
      ev << state.epoch << ',' << std::setprecision(9) << report.accuracy << ',' << report.loss
         << '\n';
    }
    result.history.push_back(std::move(report));

    const bool periodic = options.checkpoint_every > 0 && state.epoch % options.checkpoint_every == 0;
    if (write && (periodic || state.epoch == last_epoch)) {
      result.last_checkpoint = out_dir / ("ckpt_epoch_" + std::to_string(state.epoch));
      write_checkpoint(result.last_checkpoint,
                       capture_checkpoint(state.model, manifest, result.stats, &state.optimizer,
                                          state.epoch, state.step));
    }
  }
  return result;
}

} // namespace torsd

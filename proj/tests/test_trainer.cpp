// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "torsd/checkpoint.hpp"
#include "torsd/errors.hpp"
#include "torsd/synthetic.hpp"
#include "torsd/trainer.hpp"

using namespace torsd;
namespace fs = std::filesystem;
using fixtures::scratch_dir;

namespace {

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path &p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

TorsdConfig small_cfg(std::uint64_t seed = 1) {
  TorsdConfig cfg;
  cfg.embed_dim = 16;
  cfg.seed = seed;
  return cfg;
}

OptimConfig small_opt(std::size_t epochs) {
  OptimConfig opt;
  opt.epochs = epochs;
  opt.batch_size = 24;
  return opt;
}

LabeledDataset blobs(std::size_t classes, std::size_t per_class, std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.kind = SyntheticKind::blobs;
  s.num_classes = classes;
  s.per_class = per_class;
  s.seed = seed;
  return make_synthetic(s);
}

void expect_same_params(TorsdModel<float> &a, TorsdModel<float> &b) {
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(pa[i].param->value, pb[i].param->value) << pa[i].name;
  }
}

} // namespace

// --- optimizer -------------------------------------------------------------

TEST(Sgd, MomentumAndDecayArithmetic) {
  Param<double> p({2});
  p.value = Tensor<double>({2}, {1.0, -2.0});
  ParamList<double> params{{"w", &p}};
  Sgd<double> opt(0.9, 0.1);
  p.grad = Tensor<double>({2}, {0.5, 0.0});
  opt.step(params, 0.1);
  // g = grad + wd w = (0.6, -0.2); v = g; w -= 0.1 v
  EXPECT_NEAR(p.value[0], 1.0 - 0.06, 1e-15);
  EXPECT_NEAR(p.value[1], -2.0 + 0.02, 1e-15);
  p.grad = Tensor<double>({2}, {0.0, 0.0});
  opt.step(params, 0.1);
  const double g0 = 0.1 * 0.94, v0 = 0.9 * 0.6 + g0;
  EXPECT_NEAR(p.value[0], 0.94 - 0.1 * v0, 1e-15);
  EXPECT_EQ(opt.state().size(), 1u);
}

TEST(Sgd, ClipScalesGlobalNormBeforeDecay) {
  Param<double> a({1}), b({1});
  a.value = Tensor<double>({1}, {1.0});
  b.value = Tensor<double>({1}, {1.0});
  a.grad = Tensor<double>({1}, {3.0});
  b.grad = Tensor<double>({1}, {4.0});
  ParamList<double> params{{"a", &a}, {"b", &b}};
  Sgd<double> opt(0.0, 0.1, 1.0);
  opt.step(params, 1.0);
  // |g| = 5 -> g = (0.6, 0.8); then + wd w
  EXPECT_NEAR(a.value[0], 1.0 - 0.7, 1e-15);
  EXPECT_NEAR(b.value[0], 1.0 - 0.9, 1e-15);

  // Under the cap nothing changes, bit for bit.
  Param<double> c({1}), d({1});
  c.value = d.value = Tensor<double>({1}, {1.0});
  c.grad = d.grad = Tensor<double>({1}, {0.3});
  Sgd<double> clipped(0.9, 0.1, 10.0), plain(0.9, 0.1);
  clipped.step(ParamList<double>{{"c", &c}}, 0.5);
  plain.step(ParamList<double>{{"d", &d}}, 0.5);
  EXPECT_EQ(c.value[0], d.value[0]);
}

TEST(Sgd, StateCoversEveryParameter) {
  TorsdModel<float> model(BackboneSpec{}, 16, 1);
  Sgd<float> opt(0.9f, 5e-4f);
  auto params = model.parameters();
  opt.step(params, 0.1f);
  EXPECT_EQ(opt.state().size(), params.size());
  // Decay reaches relation-head parameters even with zero gradients.
  for (auto &p : params) {
    if (p.name.rfind("rn.1.rib.fc1.weight", 0) == 0) EXPECT_GT(opt.state().at(p.name)[0] * p.param->value[0], 0.0f);
  }
}

// --- schedule --------------------------------------------------------------

TEST(OneCycle, Endpoints) {
  const std::size_t total = 1000;
  EXPECT_NEAR(one_cycle_lr(0, total, 0.1), 0.004, 1e-15);
  EXPECT_NEAR(one_cycle_lr(300, total, 0.1), 0.1, 1e-15);
  EXPECT_NEAR(one_cycle_lr(total - 1, total, 0.1), 0.1 / 1e4, 1e-15);
  EXPECT_NEAR(one_cycle_lr(0, 1, 0.1), 0.004, 1e-15);
  EXPECT_THROW(one_cycle_lr(total, total, 0.1), ArgumentError);
}

TEST(OneCycle, RisesThenFalls) {
  const std::size_t total = 500;
  for (std::size_t s = 1; s <= 150; ++s) EXPECT_GE(one_cycle_lr(s, total, 0.1), one_cycle_lr(s - 1, total, 0.1));
  for (std::size_t s = 151; s < total; ++s) EXPECT_LE(one_cycle_lr(s, total, 0.1), one_cycle_lr(s - 1, total, 0.1));
}

TEST(OneCycle, JumpsShrinkWithLength) {
  auto max_jump = [](std::size_t total) {
    double worst = 0;
    for (std::size_t s = 0; s + 1 < total; ++s) {
      worst = std::max(worst, std::abs(one_cycle_lr(s + 1, total, 0.1) - one_cycle_lr(s, total, 0.1)));
    }
    return worst;
  };
  EXPECT_GT(max_jump(100), max_jump(1000));
  EXPECT_GT(max_jump(1000), max_jump(10000));
  EXPECT_LT(max_jump(10000), 1e-4);
}

TEST(OneCycle, ConstantScheduler) {
  OptimConfig opt;
  opt.scheduler = Scheduler::constant;
  opt.peak_lr = 0.01;
  EXPECT_EQ(scheduled_lr(opt, 7, 10), 0.01);
  EXPECT_THROW(scheduled_lr(opt, 10, 10), ArgumentError);
}

// --- checkpoint ------------------------------------------------------------

class Checkpoints : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = scratch_dir("ckpt");
    manifest_.config = small_cfg();
    manifest_.num_classes = 10;
    manifest_.backbone_id = backbone_id(BackboneSpec{});
    stats_.mean = {0.1f, 0.2f, 0.3f};
    stats_.stddev = {1.0f, 2.0f, 3.0f};
  }

  fs::path dir_;
  RunManifest manifest_;
  ChannelStats stats_;
};

TEST_F(Checkpoints, RoundTripRestoresEverything) {
  TorsdModel<float> model(BackboneSpec{}, 16, 3);
  Sgd<float> opt(0.9f, 5e-4f);
  for (auto &p : model.parameters()) p.param->grad.fill(0.01f);
  opt.step(model.parameters(), 0.1f);
  write_checkpoint(dir_, capture_checkpoint(model, manifest_, stats_, &opt, 4, 17));
  const auto ckpt = read_checkpoint(dir_);
  EXPECT_EQ(ckpt.epoch, 4u);
  EXPECT_EQ(ckpt.step, 17u);
  EXPECT_EQ(ckpt.manifest.config, manifest_.config);

  auto restored = model_from_checkpoint(ckpt);
  expect_same_params(model, restored);
  Sgd<float> opt2(0.9f, 5e-4f);
  restore_checkpoint(restored, ckpt, &opt2);
  EXPECT_EQ(opt2.state(), opt.state());
  const auto stats = stats_from_checkpoint(ckpt);
  EXPECT_EQ(stats.mean, stats_.mean);
  EXPECT_EQ(stats.stddev, stats_.stddev);
}

TEST_F(Checkpoints, StrippedExportKeepsBackboneOnly) {
  TorsdModel<float> model(BackboneSpec{}, 16, 3);
  const auto full = capture_checkpoint(model, manifest_, stats_, nullptr, 1, 1);
  const auto stripped = strip_checkpoint(full);
  EXPECT_TRUE(stripped.manifest.stripped);
  for (const auto &[name, t] : stripped.tensors) {
    EXPECT_TRUE(name.rfind("backbone.", 0) == 0 || name.rfind("norm.", 0) == 0) << name;
  }
  write_checkpoint(dir_ / "full", full);
  write_checkpoint(dir_ / "stripped", stripped);
  auto dir_size = [](const fs::path &d) {
    std::uintmax_t n = 0;
    for (const auto &e : fs::directory_iterator(d)) n += fs::file_size(e.path());
    return n;
  };
  EXPECT_LT(dir_size(dir_ / "stripped"), dir_size(dir_ / "full"));

  const auto back = read_checkpoint(dir_ / "stripped");
  EXPECT_THROW(model_from_checkpoint(back), IoError);
  auto bb = backbone_from_checkpoint(back);
  EXPECT_EQ(bb.parameter_count(), model.backbone().parameter_count());
  const auto x = fixtures::random_tensor<float>({4, 3, 32, 32}, 5);
  EXPECT_EQ(bb.forward(x, false), model.backbone().forward(x, false));
}

TEST_F(Checkpoints, CorruptBlobNamesTheParameter) {
  TorsdModel<float> model(BackboneSpec{}, 16, 3);
  write_checkpoint(dir_, capture_checkpoint(model, manifest_, stats_, nullptr, 1, 1));
  const std::string index = slurp(dir_ / "index.txt");
  const auto line_end = index.find('\n');
  const std::string first = index.substr(0, line_end);
  const std::string name = first.substr(0, first.find(' '));
  const fs::path blob = dir_ / first.substr(first.find(' ') + 1);

  std::string bytes = slurp(blob);
  bytes[bytes.size() / 2] ^= 0x5a;
  std::ofstream(blob, std::ios::binary | std::ios::trunc) << bytes;
  try {
    read_checkpoint(dir_);
    FAIL() << "expected IoError";
  } catch (const IoError &e) {
    EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << e.what();
  }

  std::ofstream(blob, std::ios::binary | std::ios::trunc) << bytes.substr(0, 10);
  EXPECT_THROW(read_checkpoint(dir_), IoError);
  fs::remove(blob);
  EXPECT_THROW(read_checkpoint(dir_), IoError);
  EXPECT_THROW(read_checkpoint(dir_ / "nope"), IoError);
}

// --- steps -----------------------------------------------------------------

TEST(TrainStep, DivergenceLeavesWeightsUntouched) {
  const auto ds = blobs(2, 6);
  std::mt19937_64 rng(1);
  const auto epoch = sample_epoch_triplets(ds, rng);
  auto batch = assemble_batches(epoch.triplets, ds, 12)[0];
  batch.images[5] = std::numeric_limits<float>::infinity();
  auto state = make_train_state(BackboneSpec{.num_classes = 2}, small_cfg(), small_opt(1));
  auto snapshot = state.model;
  try {
    train_step(state, batch, small_cfg(), 0.1);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError &e) {
    EXPECT_FALSE(e.breakdown().finite());
  }
  expect_same_params(state.model, snapshot);
  EXPECT_EQ(state.step, 0u);
}

TEST(TrainStep, BaselineMatchesCrossEntropyReference) {
  const auto ds = blobs(3, 30);
  TorsdConfig cfg = small_cfg();
  cfg.enable_rn = cfg.enable_ac = cfg.enable_ld = false;
  auto state = make_train_state(BackboneSpec{.num_classes = 3}, cfg, small_opt(1));
  TappedBackbone<float> reference = state.model.backbone();
  Sgd<float> ref_opt(0.9f, 5e-4f);
  std::mt19937_64 rng(2);
  const auto epoch = sample_epoch_triplets(ds, rng);
  const auto batches = assemble_batches(epoch.triplets, ds, 9);
  for (std::size_t s = 0; s < 10; ++s) {
    const auto loss = train_step(state, batches[s], cfg, 0.05);
    const double ref_loss = reference_ce_step(reference, ref_opt, batches[s], 0.05);
    EXPECT_EQ(loss.total, ref_loss);
  }
  ParamList<float> ref_params;
  BufferList<float> buf;
  reference.collect(ref_params, buf);
  auto params = state.model.parameters();
  for (std::size_t i = 0; i < ref_params.size(); ++i) {
    EXPECT_EQ(params[i].param->value, ref_params[i].param->value) << ref_params[i].name;
  }
}

TEST(TrainStep, LossDecreasesOnBlobs) {
  const auto ds = blobs(2, 150);
  TorsdConfig cfg = small_cfg();
  OptimConfig opt = small_opt(1);
  opt.scheduler = Scheduler::constant;
  opt.peak_lr = 0.01;
  auto state = make_train_state(BackboneSpec{.num_classes = 2}, cfg, opt);
  const auto stats = compute_channel_stats(ds);
  std::vector<double> totals;
  for (std::size_t e = 0; totals.size() < 50; ++e) {
    std::mt19937_64 rng(epoch_seed(cfg.seed, e));
    const auto epoch = sample_epoch_triplets(ds, rng);
    for (const auto &b : assemble_batches(epoch.triplets, ds, 24, {&stats, false, 0})) {
      if (totals.size() == 50) break;
      totals.push_back(train_step(state, b, cfg, 0.01).total);
    }
  }
  const double head = (totals[0] + totals[1] + totals[2]) / 3;
  const double tail = (totals[47] + totals[48] + totals[49]) / 3;
  EXPECT_LT(tail, head);
}

// --- evaluation ------------------------------------------------------------

TEST(Evaluate, ChanceLevelAndAccounting) {
  const auto ds = fixtures::balanced_dataset(10, 100, 32, 4);
  TorsdModel<float> model(BackboneSpec{}, 16, 8);
  const auto stats = compute_channel_stats(ds);
  const auto report = evaluate(model, ds, stats);
  EXPECT_GE(report.accuracy, 0.0);
  EXPECT_LE(report.accuracy, 1.0);
  EXPECT_NEAR(report.accuracy, 0.1, 0.05);
  double weighted = 0;
  for (std::size_t c = 0; c < 10; ++c) weighted += report.per_class[c] * report.class_counts[c];
  EXPECT_NEAR(weighted / report.count, report.accuracy, 1e-12);

  auto stripped = strip_for_inference(model);
  const auto direct = evaluate(stripped, ds, stats);
  EXPECT_EQ(direct.accuracy, report.accuracy);
  EXPECT_EQ(direct.loss, report.loss);
  EXPECT_THROW(evaluate(model, LabeledDataset{}, stats), ArgumentError);
}

// --- loop ------------------------------------------------------------------

TEST(Train, SixImagesOneEpochTwoSteps) {
  const auto ds = fixtures::random_dataset({0, 0, 0, 1, 1, 1}, 2);
  OptimConfig opt = small_opt(1);
  opt.batch_size = 3;
  const auto dir = scratch_dir("six");
  TrainOptions options;
  options.augment = false;
  const auto result = train(ds, small_cfg(), opt, dir, options);
  EXPECT_EQ(result.state.step, 2u);
  EXPECT_EQ(line_count(dir / "metrics.csv"), 3u);
  EXPECT_EQ(slurp(dir / "metrics.csv").substr(0, 20), "step,lr,task,triplet");
  EXPECT_EQ(line_count(dir / "eval.csv"), 2u);
  EXPECT_TRUE(fs::exists(dir / "manifest.txt"));
  EXPECT_TRUE(fs::exists(dir / "ckpt_epoch_1" / "index.txt"));
}

TEST(Train, EmptyOutDirWritesNothing) {
  const auto ds = blobs(2, 6);
  const auto before = fs::current_path();
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto &e : fs::directory_iterator(before)) ++entries;
  const auto result = train(ds, small_cfg(), small_opt(1), {}, {});
  EXPECT_TRUE(result.last_checkpoint.empty());
  std::size_t after = 0;
  for ([[maybe_unused]] const auto &e : fs::directory_iterator(before)) ++after;
  EXPECT_EQ(entries, after);
}

TEST(Train, IdenticalSeedsIdenticalLogs) {
  const auto ds = blobs(3, 20);
  const auto a = scratch_dir("seed_a"), b = scratch_dir("seed_b");
  TrainOptions options;
  train(ds, small_cfg(5), small_opt(2), a, options);
  train(ds, small_cfg(5), small_opt(2), b, options);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "eval.csv"), slurp(b / "eval.csv"));
}

TEST(Train, ResumeReproducesTheRun) {
  const auto ds = blobs(3, 20);
  const auto straight = scratch_dir("straight"), split = scratch_dir("split");
  TrainOptions options;
  options.checkpoint_every = 1;
  auto full = train(ds, small_cfg(7), small_opt(3), straight, options);

  TrainOptions first = options;
  first.stop_after = 1;
  train(ds, small_cfg(7), small_opt(3), split, first);
  // A partial later epoch in the log must be discarded on resume.
  std::ofstream(split / "metrics.csv", std::ios::app) << "999,0,0,0,0,0,0,0,0,0,0,0\n";
  TrainOptions second = options;
  second.resume_from = split / "ckpt_epoch_1";
  auto resumed = train(ds, small_cfg(7), small_opt(3), split, second);

  EXPECT_EQ(slurp(straight / "metrics.csv"), slurp(split / "metrics.csv"));
  EXPECT_EQ(slurp(straight / "eval.csv"), slurp(split / "eval.csv"));
  expect_same_params(full.state.model, resumed.state.model);
}

TEST(Train, ResumeRejectsDifferentConfig) {
  const auto ds = blobs(2, 10);
  const auto dir = scratch_dir("mismatch");
  TrainOptions options;
  options.checkpoint_every = 1;
  train(ds, small_cfg(), small_opt(1), dir, options);
  TrainOptions again;
  again.resume_from = dir / "ckpt_epoch_1";
  TorsdConfig other = small_cfg();
  other.alpha = 0.5;
  EXPECT_THROW(train(ds, other, small_opt(2), dir, again), ConfigValidationError);
}

TEST(Train, EpochTripletsDiffer) {
  const auto ds = blobs(4, 25);
  std::mt19937_64 a(epoch_seed(3, 0)), b(epoch_seed(3, 1));
  EXPECT_NE(sample_epoch_triplets(ds, a).triplets, sample_epoch_triplets(ds, b).triplets);
  EXPECT_EQ(epoch_seed(6, 3), 5u);
}

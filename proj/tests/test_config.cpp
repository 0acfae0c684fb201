// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "test_util.hpp"
#include "torsd/config.hpp"
#include "torsd/errors.hpp"

using namespace torsd;

TEST(Config, PaperDefaults) {
  const TorsdConfig c = default_paper_config();
  EXPECT_EQ(c.alpha, 0.01);
  EXPECT_EQ(c.beta, 0.01);
  EXPECT_EQ(c.sigma, 0.01);
  EXPECT_EQ(c.gamma_p, 0.2);
  EXPECT_EQ(c.gamma_n, 0.05);
  EXPECT_EQ(c.lambda_mix, 0.8);
  EXPECT_EQ(c.margin, 1.0);
  EXPECT_TRUE(c.enable_rn && c.enable_ac && c.enable_ld);
  EXPECT_FALSE(c.enable_handcrafted_rd);
  EXPECT_EQ(default_paper_config(), default_paper_config());
}

TEST(Config, OptimDefaults) {
  const OptimConfig o;
  EXPECT_EQ(o.peak_lr, 0.1);
  EXPECT_EQ(o.momentum, 0.9);
  EXPECT_EQ(o.weight_decay, 0.0005);
  EXPECT_EQ(o.epochs, 300u);
  EXPECT_EQ(o.scheduler, Scheduler::one_cycle);
  EXPECT_EQ(o.batch_size % 3, 0u);
}

TEST(Config, DefaultsValidate) {
  EXPECT_TRUE(validate_config(default_paper_config(), OptimConfig{}).empty());
}

TEST(Config, EmptyFileGivesDefaults) {
  const auto [cfg, opt] = parse_config("");
  EXPECT_EQ(cfg, default_paper_config());
  EXPECT_EQ(opt, OptimConfig{});
}

TEST(Config, BatchSizeMustBeMultipleOfThree) {
  try {
    parse_config("batch_size=128\n");
    FAIL() << "expected ConfigValidationError";
  } catch (const ConfigValidationError &e) {
    EXPECT_EQ(e.key(), "batch_size");
    EXPECT_NE(std::string(e.what()).find("multiple of 3"), std::string::npos);
  }
}

TEST(Config, GradClipMustBeNonNegative) {
  EXPECT_EQ(OptimConfig{}.grad_clip, 0.0);
  EXPECT_EQ(parse_config("grad_clip=2.5").second.grad_clip, 2.5);
  try {
    parse_config("grad_clip=-1");
    FAIL() << "expected ConfigValidationError";
  } catch (const ConfigValidationError &e) {
    EXPECT_EQ(e.key(), "grad_clip");
  }
}

TEST(Config, LambdaOutOfRange) {
  try {
    parse_config("lambda_mix=1.5");
    FAIL() << "expected ConfigValidationError";
  } catch (const ConfigValidationError &e) {
    EXPECT_EQ(e.key(), "lambda_mix");
  }
}

TEST(Config, AuxiliaryNeedsRelationNetworks) {
  TorsdConfig c = default_paper_config();
  c.enable_rn = false;
  c.enable_ac = true;
  EXPECT_EQ(validate_config(c, OptimConfig{}).size(), 1u);
}

TEST(Config, HandcraftedExcludesRelationNetworks) {
  TorsdConfig c = default_paper_config();
  c.enable_handcrafted_rd = true;
  EXPECT_EQ(validate_config(c, OptimConfig{}).size(), 1u);
}

TEST(Config, ReportsEveryViolation) {
  TorsdConfig c = default_paper_config();
  c.alpha = -1;
  c.kl_temperature = 0;
  c.embed_dim = 0;
  OptimConfig o;
  o.batch_size = 10;
  o.momentum = 1.0;
  EXPECT_EQ(validate_config(c, o).size(), 5u);
}

TEST(Config, SyntaxErrors) {
  EXPECT_THROW(parse_config("no_equals_sign"), ConfigSyntaxError);
  EXPECT_THROW(parse_config("unknown_key=1"), ConfigSyntaxError);
  EXPECT_THROW(parse_config("alpha=abc"), ConfigSyntaxError);
  EXPECT_THROW(parse_config("enable_rn=maybe"), ConfigSyntaxError);
  EXPECT_THROW(parse_config("scheduler=linear"), ConfigSyntaxError);
}

TEST(Config, CommentsAndWhitespace) {
  const auto [cfg, opt] = parse_config("# header\n  alpha = 0.5  # trailing\n\nepochs=3\n");
  EXPECT_EQ(cfg.alpha, 0.5);
  EXPECT_EQ(opt.epochs, 3u);
}

TEST(Config, LoadMissingFileIsIoError) {
  EXPECT_THROW(load_config("/nonexistent/torsd.cfg"), IoError);
}

TEST(Config, LoadFromFile) {
  const auto dir = fixtures::scratch_dir("config_load");
  std::ofstream(dir / "c.cfg") << "gamma_p=0.3\nscheduler=constant\n";
  const auto [cfg, opt] = load_config(dir / "c.cfg");
  EXPECT_EQ(cfg.gamma_p, 0.3);
  EXPECT_EQ(opt.scheduler, Scheduler::constant);
}

TEST(Config, RoundTripProperty) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> w(0.0, 3.0), unit(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    TorsdConfig c;
    c.alpha = w(rng);
    c.beta = w(rng);
    c.gamma_p = w(rng);
    c.gamma_n = w(rng);
    c.lambda_mix = unit(rng);
    c.sigma = w(rng);
    c.margin = w(rng);
    c.embed_dim = 1 + rng() % 256;
    c.kl_temperature = 0.1 + w(rng);
    c.enable_handcrafted_rd = coin(rng);
    c.enable_rn = !c.enable_handcrafted_rd && coin(rng);
    c.enable_ac = c.enable_rn && coin(rng);
    c.enable_ld = coin(rng);
    c.seed = rng();
    OptimConfig o;
    o.peak_lr = 1e-3 + w(rng);
    o.momentum = unit(rng) * 0.99;
    o.weight_decay = unit(rng) * 1e-2;
    o.epochs = 1 + rng() % 500;
    o.batch_size = 3 * (1 + rng() % 100);
    o.scheduler = coin(rng) ? Scheduler::constant : Scheduler::one_cycle;
    o.grad_clip = coin(rng) ? 0.0 : w(rng);
    ASSERT_TRUE(validate_config(c, o).empty());
    const auto [c2, o2] = parse_config(serialize_config(c, o));
    EXPECT_EQ(c2, c);
    EXPECT_EQ(o2, o);
    EXPECT_EQ(serialize_config(c2, o2), serialize_config(c, o));
  }
}

TEST(Config, ManifestRoundTrip) {
  RunManifest m;
  m.config = default_paper_config();
  m.config.seed = 17;
  m.optim.epochs = 12;
  m.dataset_id = "synthetic-gratings:classes=4";
  m.backbone_id = "toy_cnn:width=8";
  m.num_classes = 4;
  m.stripped = true;
  m.start_time = utc_timestamp();
  m.version = kVersion;
  const RunManifest back = parse_manifest(serialize_manifest(m));
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.optim, m.optim);
  EXPECT_EQ(back.dataset_id, m.dataset_id);
  EXPECT_EQ(back.backbone_id, m.backbone_id);
  EXPECT_EQ(back.num_classes, 4u);
  EXPECT_TRUE(back.stripped);
  EXPECT_EQ(back.start_time, m.start_time);
  EXPECT_EQ(back.version, m.version);
}

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "test_util.hpp"
#include "torsd/errors.hpp"
#include "torsd/gradcheck.hpp"
#include "torsd/report.hpp"
#include "torsd/separability.hpp"
#include "torsd/trainer.hpp"
#include "torsd/tsne.hpp"

using namespace torsd;
namespace fs = std::filesystem;

namespace {

DepthFeatureSet feature_set(const std::vector<std::vector<double>> &rows, std::vector<int> labels) {
  DepthFeatureSet fs;
  fs.depth = 1;
  fs.features = Tensor<double>({rows.size(), rows[0].size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), fs.features.row(i).begin());
  }
  fs.labels = std::move(labels);
  return fs;
}

DepthFeatureSet random_set(std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  DepthFeatureSet fs;
  fs.features = Tensor<double>({n, dim});
  for (double &v : fs.features.values()) v = g(rng) * 3;
  for (std::size_t i = 0; i < n; ++i) fs.labels.push_back(static_cast<int>(i % classes));
  return fs;
}

// Mean silhouette coefficient, straight from the definition.
double silhouette(const std::vector<std::array<double, 2>> &pts, const std::vector<int> &labels) {
  const std::size_t n = pts.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, std::size_t>> by_class;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
      auto &[sum, count] = by_class[labels[j]];
      sum += d;
      ++count;
    }
    const double a = by_class[labels[i]].first / by_class[labels[i]].second;
    double b = std::numeric_limits<double>::infinity();
    for (const auto &[c, sc] : by_class) {
      if (c != labels[i]) b = std::min(b, sc.first / sc.second);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace

TEST(SseSsb, WorkedExample) {
  const auto fs = feature_set({{0, 0}, {2, 0}, {10, 0}, {12, 0}}, {0, 0, 1, 1});
  const auto s = sse_ssb(fs);
  EXPECT_DOUBLE_EQ(s.sse, 4.0);
  EXPECT_DOUBLE_EQ(s.ssb, 100.0);
  ASSERT_TRUE(s.ratio.has_value());
  EXPECT_DOUBLE_EQ(*s.ratio, 0.04);
}

TEST(SseSsb, TightClustersHaveZeroRatio) {
  const auto s = sse_ssb(feature_set({{1, 1}, {1, 1}, {4, 2}, {4, 2}}, {0, 0, 1, 1}));
  EXPECT_EQ(s.sse, 0.0);
  EXPECT_EQ(*s.ratio, 0.0);
}

TEST(SseSsb, NoBetweenScatterLeavesRatioUnset) {
  const auto s = sse_ssb(feature_set({{0, 0}, {2, 0}, {0, 0}, {2, 0}}, {0, 0, 1, 1}));
  EXPECT_EQ(s.ssb, 0.0);
  EXPECT_FALSE(s.ratio.has_value());
}

TEST(SseSsb, SingleClassIsDegenerate) {
  EXPECT_THROW(sse_ssb(feature_set({{0, 0}, {1, 0}, {2, 0}}, {3, 3, 3})), DegenerateError);
}

TEST(SseSsb, DecompositionOnRandomSets) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto fs = random_set(10 + seed % 50, 1 + seed % 8, 2 + seed % 5, seed);
    const auto s = sse_ssb(fs);
    // Total scatter computed independently.
    const std::size_t n = fs.size(), d = fs.features.dim(1);
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += fs.features.row(i)[j] / static_cast<double>(n);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) total += std::pow(fs.features.row(i)[j] - mean[j], 2);
    EXPECT_NEAR((s.sse + s.ssb) / total, 1.0, 1e-6);
    EXPECT_GE(s.sse, 0.0);
    EXPECT_GE(s.ssb, 0.0);
  }
}

TEST(SseSsb, InvariantUnderTranslationAndRelabeling) {
  auto fs = random_set(60, 4, 3, 9);
  const double base = *sse_ssb(fs).ratio;
  auto shifted = fs;
  for (std::size_t i = 0; i < shifted.size(); ++i)
    for (std::size_t j = 0; j < 4; ++j) shifted.features.row(i)[j] += 100.0 + j;
  EXPECT_NEAR(*sse_ssb(shifted).ratio, base, 1e-9);
  auto relabeled = fs;
  for (int &y : relabeled.labels) y = (y + 1) % 3 + 7;
  EXPECT_NEAR(*sse_ssb(relabeled).ratio, base, 1e-12);
}

TEST(DepthFeatures, ShapesDeterminismAndRange) {
  const auto ds = fixtures::balanced_dataset(2, 5);
  auto net = build_toy_cnn<float>(2, 1);
  const auto stats = compute_channel_stats(ds);
  const auto a = extract_depth_features(net, ds, 4, stats);
  EXPECT_EQ(a.features.shape(), (Shape{10, 64}));
  EXPECT_EQ(a.labels, ds.labels);
  const auto b = extract_depth_features(net, ds, 4, stats);
  EXPECT_EQ(a.features, b.features);
  EXPECT_TRUE(all_finite(a.features));
  EXPECT_THROW(extract_depth_features(net, ds, 5, stats), ArgumentError);
  EXPECT_THROW(extract_depth_features(net, ds, 0, stats), ArgumentError);
}

TEST(Tsne, CardinalityAndDeterminism) {
  const auto fs = random_set(30, 5, 3, 1);
  TsneOptions opt;
  opt.iterations = 300;
  opt.seed = 4;
  const auto a = embed_2d(fs, opt);
  EXPECT_EQ(a.size(), 30u);
  EXPECT_EQ(a, embed_2d(fs, opt));
  for (const auto &p : a) EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
  EXPECT_THROW(embed_2d(random_set(4, 2, 2, 1)), ArgumentError);
}

TEST(Tsne, SeparatedBlobsStaySeparated) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 1);
  DepthFeatureSet fs;
  fs.features = Tensor<double>({80, 10});
  for (std::size_t i = 0; i < 80; ++i) {
    const int y = static_cast<int>(i % 2);
    fs.labels.push_back(y);
    for (std::size_t j = 0; j < 10; ++j) fs.features.row(i)[j] = g(rng) + (y ? 20.0 : 0.0);
  }
  TsneOptions opt;
  opt.seed = 1;
  const auto pts = embed_2d(fs, opt);
  EXPECT_GT(silhouette(pts, fs.labels), 0.5);
}

TEST(Report, FilesHeadersAndDeterminism) {
  const auto dir = fixtures::scratch_dir("report");
  std::vector<Separability> seps;
  std::vector<EmbeddingSet> embs;
  for (std::size_t d = 1; d <= 4; ++d) {
    seps.push_back({d, 4.0 * d, 100.0, 4.0 * d + 100.0, 0.04 * d});
    embs.push_back({d, {{0.0, 1.0}, {2.0, 3.0}}, {0, 1}});
  }
  seps[3].ratio.reset();
  EvalReport r;
  r.accuracy = 0.5;
  r.loss = 1.0;
  emit_report(seps, embs, {r}, dir);
  for (std::size_t d = 1; d <= 4; ++d) {
    const auto csv = slurp(dir / ("embeddings_depth" + std::to_string(d) + ".csv"));
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "x,y,label");
    EXPECT_TRUE(fs::exists(dir / ("embeddings_depth" + std::to_string(d) + ".svg")));
  }
  const auto sep = slurp(dir / "separability.csv");
  EXPECT_EQ(sep.substr(0, sep.find('\n')), "depth,SSE,SSB,ratio");
  EXPECT_NE(sep.find("1,4,100,0.04\n"), std::string::npos) << sep;
  EXPECT_NE(sep.find("4,16,100,\n"), std::string::npos) << sep;
  EXPECT_TRUE(fs::exists(dir / "separability.svg"));
  EXPECT_TRUE(fs::exists(dir / "eval_history.csv"));

  const auto before = slurp(dir / "embeddings_depth2.csv");
  emit_report(seps, embs, {r}, dir);
  EXPECT_EQ(before, slurp(dir / "embeddings_depth2.csv"));
  EXPECT_EQ(sep, slurp(dir / "separability.csv"));

  const auto blocker = dir / "file";
  std::ofstream(blocker) << "x";
  EXPECT_THROW(emit_report(seps, embs, {}, blocker / "sub"), IoError);
}

TEST(TaskGradient, MatchesSoftmaxMinusOneHot) {
  const auto logits = fixtures::random_tensor<double>({3, 4}, 2);
  const std::vector<int> labels{1, 1, 3};
  OutputGrads<double> g;
  g.logits = Tensor<double>(logits.shape());
  task_loss(logits, labels, &g);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto row = logits.row(r);
    double z = 0;
    for (double v : row) z += std::exp(v);
    for (std::size_t c = 0; c < 4; ++c) {
      const double p = std::exp(row[c]) / z;
      const double y = static_cast<int>(c) == labels[r] ? 1.0 : 0.0;
      EXPECT_NEAR(g.logits.row(r)[c], (p - y) / 3.0, 1e-14);
    }
  }
}

TEST(Gradcheck, TaskOnlyOnTinyBundle) {
  auto problem = tiny_gradcheck_problem(2);
  TorsdConfig cfg;
  cfg.enable_rn = cfg.enable_ac = cfg.enable_ld = false;
  cfg.embed_dim = 4;
  const auto report = gradcheck(problem, cfg);
  EXPECT_TRUE(report.finite);
  EXPECT_LT(report.max_rel_err, 1e-4);
}

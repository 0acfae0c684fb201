// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"
#include "torsd/errors.hpp"
#include "torsd/relation_heads.hpp"

using namespace torsd;
using fixtures::central_difference;
using fixtures::random_tensor;
using fixtures::rel_err;

namespace {

BlockSpec toy_block(std::size_t index) {
  const std::size_t c = 8u << (index - 1), side = 32u >> index;
  return {index, c, side, side, std::size_t{2} << (index - 1)};
}

double dot(const Tensor<double> &a, const Tensor<double> &b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

// Max relative error of the analytic gradient of
// L = <w, R(pairs)> + <v, Z(pairs)> against central differences.
double relation_gradcheck(RelationNetwork<double> &rn, Tensor<double> pairs, std::uint64_t seed) {
  Tensor<double> z = rn.project(pairs, true);
  Tensor<double> r = rn.relate(z, true);
  const auto w = random_tensor<double>(r.shape(), seed);
  const auto v = random_tensor<double>(z.shape(), seed + 1);
  ParamList<double> params;
  BufferList<double> buffers;
  rn.collect(params, buffers);
  for (auto &p : params) p.param->zero_grad();
  const Tensor<double> d_pairs = rn.backward(w, v);
  auto loss = [&] {
    const auto zz = rn.project(pairs, true);
    return dot(w, rn.relate(zz, true)) + dot(v, zz);
  };
  double worst = 0;
  for (auto &p : params) {
    const std::size_t stride = std::max<std::size_t>(1, p.param->value.numel() / 25);
    for (std::size_t i = 0; i < p.param->value.numel(); i += stride) {
      worst = std::max(worst, rel_err(p.param->grad[i], central_difference(p.param->value[i], loss)));
    }
  }
  for (std::size_t i = 0; i < pairs.numel(); i += 7) {
    worst = std::max(worst, rel_err(d_pairs[i], central_difference(pairs[i], loss)));
  }
  return worst;
}

TappedFeatures<double> toy_features(std::size_t triplets, std::uint64_t seed) {
  TappedFeatures<double> f;
  for (std::size_t d = 1; d <= 4; ++d) {
    const auto b = toy_block(d);
    f.taps.push_back(random_tensor<double>({3 * triplets, b.channels, b.height, b.width}, seed + d));
  }
  f.logits = random_tensor<double>({3 * triplets, 10}, seed);
  return f;
}

std::vector<BlockSpec> toy_blocks() { return {toy_block(1), toy_block(2), toy_block(3), toy_block(4)}; }

} // namespace

TEST(ConcatPair, StacksChannelsAnchorFirst) {
  const auto a = random_tensor<float>({2, 8, 16, 16}, 1);
  const auto b = random_tensor<float>({2, 8, 16, 16}, 2);
  const auto ab = concat_pair(a, b);
  EXPECT_EQ(ab.shape(), (Shape{2, 16, 16, 16}));
  const auto [left, right] = split_channels(ab);
  EXPECT_EQ(left, a);
  EXPECT_EQ(right, b);
  EXPECT_NE(concat_pair(a, b), concat_pair(b, a));
  const auto aa = concat_pair(a, a);
  const auto [l2, r2] = split_channels(aa);
  EXPECT_EQ(l2, r2);
  EXPECT_THROW(concat_pair(a, random_tensor<float>({2, 8, 8, 8}, 3)), ShapeError);
}

TEST(RelationNetwork, ProjectsToEmbeddingWidth) {
  RelationNetwork<float> rn(toy_block(1), 64);
  Rng rng(1);
  rn.init(rng);
  EXPECT_EQ(rn.pair_channels(), 16u);
  const auto z = rn.project(random_tensor<float>({3, 16, 16, 16}, 1), true);
  EXPECT_EQ(z.shape(), (Shape{3, 64}));
  EXPECT_EQ(rn.relate(z, true).shape(), (Shape{3, 1}));
  EXPECT_THROW(rn.project(random_tensor<float>({3, 8, 16, 16}, 1), true), ShapeError);
  EXPECT_THROW(rn.relate(random_tensor<float>({3, 32}, 1), true), ShapeError);
}

TEST(RelationNetwork, ZeroProjectionGivesZeroEmbedding) {
  RelationNetwork<float> rn(toy_block(2), 16);
  Rng rng(1);
  rn.init(rng);
  rn.projection().weight().value.fill(0.0f);
  rn.projection().bias().value.fill(0.0f);
  const auto z = rn.project(random_tensor<float>({2, 32, 8, 8}, 1), true);
  for (float v : z.values()) EXPECT_EQ(v, 0.0f);
  // Biases start at zero, so R(0) = 0.
  const auto r = rn.relate(z, true);
  for (float v : r.values()) EXPECT_EQ(v, 0.0f);
}

TEST(RelationNetwork, Deterministic) {
  RelationNetwork<float> rn(toy_block(3), 16);
  Rng rng(4);
  rn.init(rng);
  const auto pairs = random_tensor<float>({4, 64, 4, 4}, 2);
  const auto r1 = rn.relate(rn.project(pairs, true), true);
  const auto r2 = rn.relate(rn.project(pairs, false), false);
  EXPECT_EQ(r1, r2);
}

TEST(RelationNetwork, GradientsMatchFiniteDifferences) {
  for (std::size_t depth : {1, 4}) {
    const auto b = toy_block(depth);
    RelationNetwork<double> rn(BlockSpec{b.index, 2, b.height / 2, b.width / 2, b.downsample}, 6);
    Rng rng(depth);
    rn.init(rng);
    const auto pairs = random_tensor<double>({3, 4, b.height / 2, b.width / 2}, depth);
    EXPECT_LT(relation_gradcheck(rn, pairs, 10 + depth), 1e-4) << "depth " << depth;
  }
}

TEST(AuxHead, IsExactlyAffine) {
  AuxClassifierPair<double> aux(1, 8, 5);
  Rng rng(2);
  aux.init(rng);
  aux.pos.bias().value = random_tensor<double>({5}, 9);
  ParamList<double> params;
  BufferList<double> buffers;
  aux.collect(params, buffers);
  std::size_t count = 0;
  for (const auto &p : params) count += p.param->value.numel();
  EXPECT_EQ(count, 2 * (8 * 5 + 5));

  const Tensor<double> zero({1, 8});
  const auto at_zero = aux_logits(aux.pos, zero);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(at_zero[c], aux.pos.bias().value[c]);

  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto z1 = random_tensor<double>({1, 8}, s);
    const auto z2 = random_tensor<double>({1, 8}, s + 100);
    Tensor<double> sum = z1;
    sum += z2;
    Tensor<double> twice = z1;
    twice += z1;
    const auto l1 = aux_logits(aux.pos, z1), l2 = aux_logits(aux.pos, z2);
    const auto l12 = aux_logits(aux.pos, sum), l11 = aux_logits(aux.pos, twice);
    for (std::size_t c = 0; c < 5; ++c) {
      const double b = aux.pos.bias().value[c];
      EXPECT_NEAR(l1[c] + l2[c] - l12[c], b, 1e-12);
      EXPECT_NEAR(l11[c] - b, 2 * (l1[c] - b), 1e-12);
    }
  }
  EXPECT_THROW(aux_logits(aux.pos, Tensor<double>({1, 7})), ShapeError);
}

TEST(LogitRib, ShapeDeterminismAndZeroInit) {
  LogitRIB<double> lrib(10);
  Rng rng(3);
  lrib.init(rng);
  const auto a = random_tensor<double>({4, 10}, 1), b = random_tensor<double>({4, 10}, 2);
  const auto r1 = logit_relation(lrib, a, b);
  EXPECT_EQ(r1.shape(), (Shape{4, 1}));
  EXPECT_EQ(r1, logit_relation(lrib, a, b));
  EXPECT_THROW(logit_relation(lrib, a, random_tensor<double>({4, 9}, 2)), ShapeError);

  auto &last = dynamic_cast<Linear<double> &>(lrib.net().at(2));
  last.weight().value.fill(0.0);
  const auto zeroed = logit_relation(lrib, a, b);
  for (double v : zeroed.values()) EXPECT_EQ(v, 0.0);
}

TEST(LogitRib, OutputIsBounded) {
  LogitRIB<double> lrib(10);
  Rng rng(4);
  lrib.init(rng);
  auto a = random_tensor<double>({8, 10}, 5), b = random_tensor<double>({8, 10}, 6);
  for (double &v : a.values()) v *= 1e4;
  const auto r = logit_relation(lrib, a, b);
  for (double v : r.values()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(LogitRib, GradientsMatchFiniteDifferences) {
  LogitRIB<double> lrib(3);
  Rng rng(5);
  lrib.init(rng);
  auto stacked = random_tensor<double>({4, 6}, 1);
  EXPECT_LT(fixtures::layer_gradcheck(lrib.net(), stacked, true, 2), 1e-6);
}

TEST(Heads, NamesFollowCheckpointLayout) {
  RelationHeads<float> heads(toy_blocks(), 16, 10, 1);
  ParamList<float> params;
  BufferList<float> buffers;
  heads.collect(params, buffers);
  std::set<std::string> prefixes;
  for (const auto &p : params) {
    const auto &n = p.name;
    const bool ok = n.rfind("rn.", 0) == 0 || n.rfind("aux.", 0) == 0 || n.rfind("logit_rib.", 0) == 0;
    EXPECT_TRUE(ok) << n;
    prefixes.insert(n.substr(0, n.find('.', n.find('.') + 1)));
  }
  for (int d = 1; d <= 4; ++d) {
    EXPECT_TRUE(prefixes.count("rn." + std::to_string(d)));
    EXPECT_TRUE(prefixes.count("aux." + std::to_string(d)));
  }
  bool has_fpl = false, has_rib = false, has_pos = false, has_neg = false;
  for (const auto &p : params) {
    has_fpl |= p.name.rfind("rn.1.fpl.", 0) == 0;
    has_rib |= p.name.rfind("rn.1.rib.", 0) == 0;
    has_pos |= p.name.rfind("aux.1.pos.", 0) == 0;
    has_neg |= p.name.rfind("aux.1.neg.", 0) == 0;
  }
  EXPECT_TRUE(has_fpl && has_rib && has_pos && has_neg);
}

TEST(ForwardRelations, CountsAndFiniteness) {
  RelationHeads<double> heads(toy_blocks(), 16, 10, 1);
  const auto feats = toy_features(2, 3);
  auto bundle = forward_relations(feats, heads, true);
  ASSERT_EQ(bundle.depth(), 4u);
  std::size_t values = 0;
  for (std::size_t d = 0; d < 4; ++d) {
    EXPECT_EQ(bundle.z_pos[d].shape(), (Shape{2, 16}));
    values += bundle.r_pos[d].numel() + bundle.r_neg[d].numel();
    EXPECT_TRUE(all_finite(bundle.r_pos[d]) && all_finite(bundle.r_neg[d]));
  }
  EXPECT_EQ(values, 16u);
  EXPECT_TRUE(bundle.logit_r_pos.empty());
  forward_logit_relations(feats, heads, bundle, true);
  EXPECT_EQ(bundle.logit_r_pos.shape(), (Shape{2, 1}));
  const auto aux = forward_aux(bundle, heads, true);
  EXPECT_EQ(aux.pos.size(), 4u);
  EXPECT_EQ(aux.neg[3].shape(), (Shape{2, 10}));
}

TEST(ForwardRelations, PairsMatchSeparateEvaluation) {
  RelationHeads<double> heads(toy_blocks(), 8, 10, 2);
  const auto feats = toy_features(2, 4);
  const auto bundle = forward_relations(feats, heads, true);
  for (std::size_t d = 1; d <= 4; ++d) {
    auto &rn = heads.relation[d - 1];
    const auto pos = rn.relate(
        rn.project(concat_pair(feats.role(d, Role::anchor), feats.role(d, Role::positive)), true), true);
    const auto neg = rn.relate(
        rn.project(concat_pair(feats.role(d, Role::anchor), feats.role(d, Role::negative)), true), true);
    for (std::size_t t = 0; t < 2; ++t) {
      EXPECT_NEAR(pos[t], bundle.r_pos[d - 1][t], 1e-12);
      EXPECT_NEAR(neg[t], bundle.r_neg[d - 1][t], 1e-12);
    }
  }
}

TEST(ForwardRelations, DepthMismatchIsConfigError) {
  RelationHeads<double> heads({toy_block(1), toy_block(2)}, 8, 10, 1);
  EXPECT_THROW(forward_relations(toy_features(1, 1), heads, true), ConfigValidationError);
}

TEST(ForwardRelations, DepthParametersAreIndependent) {
  RelationHeads<double> heads(toy_blocks(), 8, 10, 1);
  const auto feats = toy_features(2, 5);
  const auto before = forward_relations(feats, heads, true);
  ParamList<double> params;
  BufferList<double> buffers;
  heads.relation[0].collect(params, buffers);
  for (auto &p : params) {
    for (double &v : p.param->value.values()) v += 0.05;
  }
  const auto after = forward_relations(feats, heads, true);
  EXPECT_NE(before.r_pos[0], after.r_pos[0]);
  for (std::size_t d = 1; d < 4; ++d) {
    EXPECT_EQ(before.r_pos[d], after.r_pos[d]);
    EXPECT_EQ(before.r_neg[d], after.r_neg[d]);
  }
}

TEST(ForwardRelations, RelationsDependOnAnchorFeatures) {
  RelationHeads<double> heads(toy_blocks(), 8, 10, 3);
  auto feats = toy_features(1, 6);
  auto r_of = [&] { return forward_relations(feats, heads, true).r_pos[0][0]; };
  double total = 0;
  for (std::size_t i = 0; i < 64; ++i) total += std::abs(central_difference(feats.taps[0][i * 7], r_of));
  EXPECT_GT(total, 0);
}

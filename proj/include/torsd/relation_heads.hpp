// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "torsd/backbone.hpp"
#include "torsd/layers.hpp"

namespace torsd {

/// Channel-stacks two depth-i maps as [f_a; f_b] (anchor first). Throws
/// ShapeError on mismatched shapes.
template <typename T>
Tensor<T> concat_pair(const Tensor<T> &f_a, const Tensor<T> &f_b);

/// Relation network for one depth: a feature projection stack (FPL) mapping
/// a 2C_i-channel pair map to a D-dim embedding, followed by a relational
/// interaction block (RIB) mapping the embedding to one unconstrained scalar.
///
/// FPL: stride-2 3x3 conv + ReLU, repeated until the map is at most 2x2
/// (first conv 2C_i -> D, then D -> D), a 1x1 conv to D channels and global
/// average pooling. RIB: Linear(D, max(D/2, 1)), ReLU, Linear(., 1).
template <typename T>
class RelationNetwork {
public:
  RelationNetwork(const BlockSpec &block, std::size_t embed_dim);

  std::size_t depth() const { return depth_; }
  std::size_t pair_channels() const { return pair_channels_; }
  std::size_t embed_dim() const { return embed_dim_; }

  /// [N, 2C_i, H_i, W_i] -> Z [N, D].
  Tensor<T> project(const Tensor<T> &pairs, bool training);
  /// [N, D] -> R [N, 1].
  Tensor<T> relate(const Tensor<T> &z, bool training);
  /// Gradient w.r.t. the pair maps of the last project/relate calls, given
  /// dL/dR and any additional dL/dZ (e.g. from auxiliary heads; may be empty).
  Tensor<T> backward(const Tensor<T> &d_relation, const Tensor<T> &d_embedding);

  Sequential<T> &fpl() { return fpl_; }
  Sequential<T> &rib() { return rib_; }
  /// The final 1x1 projection of the FPL.
  Conv2d<T> &projection();

  void collect(ParamList<T> &params, BufferList<T> &buffers);
  void init(Rng &rng);

private:
  std::size_t depth_;
  std::size_t pair_channels_;
  std::size_t embed_dim_;
  Sequential<T> fpl_;
  Sequential<T> rib_;
  std::size_t projection_index_ = 0;
  bool related_ = false;
};

/// Positive and negative auxiliary classifiers of one depth: each a single
/// linear map D -> num_classes.
template <typename T>
struct AuxClassifierPair {
  Linear<T> pos;
  Linear<T> neg;
  std::size_t depth;

  AuxClassifierPair(std::size_t depth, std::size_t embed_dim, std::size_t num_classes)
      : pos(embed_dim, num_classes), neg(embed_dim, num_classes), depth(depth) {}
  void collect(ParamList<T> &params, BufferList<T> &buffers);
  void init(Rng &rng);
};

/// RIB over stacked backbone logits [l_a; l_b]: Linear(2K, K), ReLU,
/// Linear(K, 1), tanh.
template <typename T>
class LogitRIB {
public:
  explicit LogitRIB(std::size_t num_classes);

  /// [N, 2K] -> [N, 1].
  Tensor<T> forward(const Tensor<T> &stacked, bool training);
  Tensor<T> backward(const Tensor<T> &d_out) { return net_.backward(d_out); }
  Sequential<T> &net() { return net_; }
  std::size_t num_classes() const { return num_classes_; }
  void collect(ParamList<T> &params, BufferList<T> &buffers);
  void init(Rng &rng) { net_.init(rng); }

private:
  std::size_t num_classes_;
  Sequential<T> net_;
};

/// logits = W Z + b. Throws ShapeError when Z's width is not D.
template <typename T>
Tensor<T> aux_logits(Linear<T> &head, const Tensor<T> &z);

/// psi([logits_a; logits_b]) per row.
template <typename T>
Tensor<T> logit_relation(LogitRIB<T> &lrib, const Tensor<T> &logits_a, const Tensor<T> &logits_b);

/// All training-time modules attached to a backbone.
template <typename T>
struct RelationHeads {
  std::vector<RelationNetwork<T>> relation;
  std::vector<AuxClassifierPair<T>> aux;
  LogitRIB<T> logit_rib;

  RelationHeads(const std::vector<BlockSpec> &blocks, std::size_t embed_dim,
                std::size_t num_classes, std::uint64_t seed);
  std::size_t depth() const { return relation.size(); }
  /// Names: rn.{i}.fpl.*, rn.{i}.rib.*, aux.{i}.pos.*, aux.{i}.neg.*, logit_rib.*
  void collect(ParamList<T> &params, BufferList<T> &buffers);
};

/// Per-depth embeddings and relations of the positive and negative pairs,
/// plus the logit-level relations. Depth d lives at index d - 1.
template <typename T>
struct RelationBundle {
  std::vector<Tensor<T>> z_pos; // [T, D]
  std::vector<Tensor<T>> z_neg;
  std::vector<Tensor<T>> r_pos; // [T, 1]
  std::vector<Tensor<T>> r_neg;
  Tensor<T> logit_r_pos; // [T, 1], empty unless logit calibration ran
  Tensor<T> logit_r_neg;

  std::size_t depth() const { return r_pos.size(); }
  bool empty() const { return r_pos.empty(); }
};

/// Auxiliary classifier logits per depth, [T, num_classes] each.
template <typename T>
struct AuxOutputs {
  std::vector<Tensor<T>> pos;
  std::vector<Tensor<T>> neg;

  bool empty() const { return pos.empty(); }
};

/// Runs every relation network on F_p = [f_o; f_p] and F_n = [f_o; f_n]
/// (one batched pass of 2T pairs per depth). Throws ConfigValidationError
/// when the tap count differs from the number of relation networks.
template <typename T>
RelationBundle<T> forward_relations(const TappedFeatures<T> &features, RelationHeads<T> &heads,
                                    bool training);

/// Auxiliary logits from the bundle's embeddings.
template <typename T>
AuxOutputs<T> forward_aux(const RelationBundle<T> &bundle, RelationHeads<T> &heads,
                          bool training);

/// Fills bundle.logit_r_pos / logit_r_neg from backbone logits.
template <typename T>
void forward_logit_relations(const TappedFeatures<T> &features, RelationHeads<T> &heads,
                             RelationBundle<T> &bundle, bool training);

} // namespace torsd

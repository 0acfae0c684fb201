// SPDX-License-Identifier: Apache-2.0
#include "torsd/relation_heads.hpp"

#include <algorithm>

#include "torsd/errors.hpp"

namespace torsd {

template <typename T>
Tensor<T> concat_pair(const Tensor<T> &f_a, const Tensor<T> &f_b) {
  return concat_channels(f_a, f_b);
}

// ---------------------------------------------------------------------------
// RelationNetwork

template <typename T>
RelationNetwork<T>::RelationNetwork(const BlockSpec &block, std::size_t embed_dim)
    : depth_(block.index), pair_channels_(2 * block.channels), embed_dim_(embed_dim) {
  std::size_t extent = std::max(block.height, block.width);
  std::size_t channels = pair_channels_;
  std::size_t j = 1;
  while (extent > 2) {
    fpl_.template emplace<Conv2d<T>>("conv" + std::to_string(j), channels, embed_dim, 3, 2, 1,
                                     true);
    fpl_.template emplace<ReLU<T>>("relu" + std::to_string(j));
    channels = embed_dim;
    extent = (extent + 1) / 2;
    ++j;
  }
  projection_index_ = fpl_.size();
  fpl_.template emplace<Conv2d<T>>("proj", channels, embed_dim, 1, 1, 0, true);
  fpl_.template emplace<GlobalAvgPool<T>>("pool");

  const std::size_t hidden = std::max<std::size_t>(embed_dim / 2, 1);
  rib_.template emplace<Linear<T>>("fc1", embed_dim, hidden);
  rib_.template emplace<ReLU<T>>("relu");
  rib_.template emplace<Linear<T>>("fc2", hidden, 1);
}

template <typename T>
Conv2d<T> &RelationNetwork<T>::projection() {
  return static_cast<Conv2d<T> &>(fpl_.at(projection_index_));
}

template <typename T>
Tensor<T> RelationNetwork<T>::project(const Tensor<T> &pairs, bool training) {
  if (pairs.rank() != 4 || pairs.dim(1) != pair_channels_) {
    throw ShapeError("relation network " + std::to_string(depth_) + " expects pair maps with " +
                     std::to_string(pair_channels_) + " channels, got " +
                     shape_str(pairs.shape()));
  }
  related_ = false;
  return fpl_.forward(pairs, training);
}

template <typename T>
Tensor<T> RelationNetwork<T>::relate(const Tensor<T> &z, bool training) {
  if (z.rank() != 2 || z.dim(1) != embed_dim_) {
    throw ShapeError("relation block expects [N, " + std::to_string(embed_dim_) + "], got " +
                     shape_str(z.shape()));
  }
  related_ = true;
  return rib_.forward(z, training);
}

template <typename T>
Tensor<T> RelationNetwork<T>::backward(const Tensor<T> &d_relation, const Tensor<T> &d_embedding) {
  Tensor<T> dz;
  if (!d_relation.empty()) {
    if (!related_) throw StateError("relation network backward without a relate() pass");
    dz = rib_.backward(d_relation);
    if (!d_embedding.empty()) dz += d_embedding;
  } else {
    dz = d_embedding;
  }
  return fpl_.backward(dz);
}

template <typename T>
void RelationNetwork<T>::collect(ParamList<T> &params, BufferList<T> &buffers) {
  const std::string prefix = "rn." + std::to_string(depth_);
  fpl_.collect(prefix + ".fpl", params, buffers);
  rib_.collect(prefix + ".rib", params, buffers);
}

template <typename T>
void RelationNetwork<T>::init(Rng &rng) {
  fpl_.init(rng);
  rib_.init(rng);
}

// ---------------------------------------------------------------------------
// Auxiliary classifiers / logit RIB

template <typename T>
void AuxClassifierPair<T>::collect(ParamList<T> &params, BufferList<T> &buffers) {
  const std::string prefix = "aux." + std::to_string(depth);
  pos.collect(prefix + ".pos", params, buffers);
  neg.collect(prefix + ".neg", params, buffers);
}

template <typename T>
void AuxClassifierPair<T>::init(Rng &rng) {
  pos.init(rng);
  neg.init(rng);
}

template <typename T>
LogitRIB<T>::LogitRIB(std::size_t num_classes) : num_classes_(num_classes) {
  net_.template emplace<Linear<T>>("fc1", 2 * num_classes, num_classes);
  net_.template emplace<ReLU<T>>("relu");
  net_.template emplace<Linear<T>>("fc2", num_classes, 1);
  // Bounded so the calibration term, which is linear in this output, cannot
  // run away to minus infinity.
  net_.template emplace<Tanh<T>>("tanh");
}

template <typename T>
Tensor<T> LogitRIB<T>::forward(const Tensor<T> &stacked, bool training) {
  if (stacked.rank() != 2 || stacked.dim(1) != 2 * num_classes_) {
    throw ShapeError("logit RIB expects [N, " + std::to_string(2 * num_classes_) + "], got " +
                     shape_str(stacked.shape()));
  }
  return net_.forward(stacked, training);
}

template <typename T>
void LogitRIB<T>::collect(ParamList<T> &params, BufferList<T> &buffers) {
  net_.collect("logit_rib", params, buffers);
}

template <typename T>
Tensor<T> aux_logits(Linear<T> &head, const Tensor<T> &z) {
  if (z.rank() != 2 || z.dim(1) != head.in_features()) {
    throw ShapeError("auxiliary classifier expects [N, " + std::to_string(head.in_features()) +
                     "], got " + shape_str(z.shape()));
  }
  return head.forward(z, true);
}

template <typename T>
Tensor<T> logit_relation(LogitRIB<T> &lrib, const Tensor<T> &logits_a, const Tensor<T> &logits_b) {
  if (logits_a.shape() != logits_b.shape()) {
    throw ShapeError("logit_relation: " + shape_str(logits_a.shape()) + " vs " +
                     shape_str(logits_b.shape()));
  }
  return lrib.forward(concat_channels(logits_a, logits_b), true);
}

template <typename T>
RelationHeads<T>::RelationHeads(const std::vector<BlockSpec> &blocks, std::size_t embed_dim,
                                std::size_t num_classes, std::uint64_t seed)
    : logit_rib(num_classes) {
  for (const auto &b : blocks) {
    relation.emplace_back(b, embed_dim);
    aux.emplace_back(b.index, embed_dim, num_classes);
  }
  Rng rng(seed);
  for (auto &rn : relation) rn.init(rng);
  for (auto &a : aux) a.init(rng);
  logit_rib.init(rng);
}

template <typename T>
void RelationHeads<T>::collect(ParamList<T> &params, BufferList<T> &buffers) {
  for (auto &rn : relation) rn.collect(params, buffers);
  for (auto &a : aux) a.collect(params, buffers);
  logit_rib.collect(params, buffers);
}

// ---------------------------------------------------------------------------
// Batched forward passes

template <typename T>
RelationBundle<T> forward_relations(const TappedFeatures<T> &features, RelationHeads<T> &heads,
                                    bool training) {
  if (features.depth() != heads.depth()) {
    throw ConfigValidationError("backbone exposes " + std::to_string(features.depth()) +
                                " taps but " + std::to_string(heads.depth()) +
                                " relation networks exist");
  }
  const std::size_t t = features.triplets();
  RelationBundle<T> bundle;
  std::vector<std::size_t> first(t), second(t);
  for (std::size_t j = 0; j < t; ++j) {
    first[j] = j;
    second[j] = t + j;
  }
  for (std::size_t d = 1; d <= features.depth(); ++d) {
    const Tensor<T> f_o = features.role(d, Role::anchor);
    const Tensor<T> pairs = concat_rows(concat_pair(f_o, features.role(d, Role::positive)),
                                        concat_pair(f_o, features.role(d, Role::negative)));
    auto &rn = heads.relation[d - 1];
    const Tensor<T> z = rn.project(pairs, training);
    const Tensor<T> r = rn.relate(z, training);
    bundle.z_pos.push_back(gather_rows(z, std::span<const std::size_t>(first)));
    bundle.z_neg.push_back(gather_rows(z, std::span<const std::size_t>(second)));
    bundle.r_pos.push_back(gather_rows(r, std::span<const std::size_t>(first)));
    bundle.r_neg.push_back(gather_rows(r, std::span<const std::size_t>(second)));
  }
  return bundle;
}

template <typename T>
AuxOutputs<T> forward_aux(const RelationBundle<T> &bundle, RelationHeads<T> &heads,
                          bool training) {
  (void)training;
  AuxOutputs<T> out;
  for (std::size_t d = 0; d < bundle.depth(); ++d) {
    out.pos.push_back(aux_logits(heads.aux[d].pos, bundle.z_pos[d]));
    out.neg.push_back(aux_logits(heads.aux[d].neg, bundle.z_neg[d]));
  }
  return out;
}

template <typename T>
void forward_logit_relations(const TappedFeatures<T> &features, RelationHeads<T> &heads,
                             RelationBundle<T> &bundle, bool training) {
  const std::size_t t = features.triplets();
  const Tensor<T> lo = features.role_logits(Role::anchor);
  const Tensor<T> stacked = concat_rows(concat_channels(lo, features.role_logits(Role::positive)),
                                        concat_channels(lo, features.role_logits(Role::negative)));
  const Tensor<T> r = heads.logit_rib.forward(stacked, training);
  std::vector<std::size_t> first(t), second(t);
  for (std::size_t j = 0; j < t; ++j) {
    first[j] = j;
    second[j] = t + j;
  }
  bundle.logit_r_pos = gather_rows(r, std::span<const std::size_t>(first));
  bundle.logit_r_neg = gather_rows(r, std::span<const std::size_t>(second));
}

#define TORSD_INSTANTIATE(T)                                                                  \
  template Tensor<T> concat_pair(const Tensor<T> &, const Tensor<T> &);                       \
  template class RelationNetwork<T>;                                                          \
  template struct AuxClassifierPair<T>;                                                       \
  template class LogitRIB<T>;                                                                 \
  template Tensor<T> aux_logits(Linear<T> &, const Tensor<T> &);                              \
  template Tensor<T> logit_relation(LogitRIB<T> &, const Tensor<T> &, const Tensor<T> &);     \
  template struct RelationHeads<T>;                                                           \
  template RelationBundle<T> forward_relations(const TappedFeatures<T> &, RelationHeads<T> &, \
                                               bool);                                         \
  template AuxOutputs<T> forward_aux(const RelationBundle<T> &, RelationHeads<T> &, bool);    \
  template void forward_logit_relations(const TappedFeatures<T> &, RelationHeads<T> &,        \
                                        RelationBundle<T> &, bool);

TORSD_INSTANTIATE(float)
TORSD_INSTANTIATE(double)

#undef TORSD_INSTANTIATE

} // namespace torsd

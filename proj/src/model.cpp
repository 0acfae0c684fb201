// SPDX-License-Identifier: Apache-2.0
#include "torsd/model.hpp"

#include <numeric>

#include "torsd/errors.hpp"
#include "torsd/rng.hpp"

namespace torsd {
namespace {

constexpr std::uint64_t kHeadStream = 1;

std::vector<std::size_t> iota_rows(std::size_t begin, std::size_t count) {
  std::vector<std::size_t> rows(count);
  std::iota(rows.begin(), rows.end(), begin);
  return rows;
}

template <typename T>
Tensor<T> take(const Tensor<T> &src, const std::vector<std::size_t> &rows) {
  return gather_rows(src, std::span<const std::size_t>(rows));
}

template <typename T>
void add_rows(Tensor<T> &dst, const Tensor<T> &src, const std::vector<std::size_t> &rows) {
  scatter_add_rows(dst, src, std::span<const std::size_t>(rows));
}

} // namespace

template <typename T>
Tensor<T> pool_features(const Tensor<T> &map) {
  if (map.rank() != 4) throw ShapeError("pool_features expects [N, C, H, W], got " +
                                        shape_str(map.shape()));
  const std::size_t n = map.dim(0), c = map.dim(1), area = map.dim(2) * map.dim(3);
  Tensor<T> out({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    const T *src = map.data() + i * area;
    T acc = T(0);
    for (std::size_t j = 0; j < area; ++j) acc += src[j];
    out[i] = acc / static_cast<T>(area);
  }
  return out;
}

template <typename T>
TorsdModel<T>::TorsdModel(const BackboneSpec &spec, std::size_t embed_dim, std::uint64_t seed)
    : TorsdModel(build_backbone<T>(spec, seed), embed_dim, seed) {}

template <typename T>
TorsdModel<T>::TorsdModel(TappedBackbone<T> backbone, std::size_t embed_dim, std::uint64_t seed)
    : backbone_(std::move(backbone)), embed_dim_(embed_dim),
      heads_(backbone_.block_specs(), embed_dim, backbone_.spec().num_classes,
             derive_seed(seed, kHeadStream)) {}

template <typename T>
StepOutputs<T> TorsdModel<T>::forward(const Tensor<T> &images, const std::vector<int> &y_o,
                                      const std::vector<int> &y_p, const std::vector<int> &y_n,
                                      const TorsdConfig &cfg, bool training) {
  if (images.rank() != 4 || images.dim(0) != 3 * y_o.size() || y_p.size() != y_o.size() ||
      y_n.size() != y_o.size()) {
    throw ShapeError("model forward: " + shape_str(images.shape()) + " images for " +
                     std::to_string(y_o.size()) + " triplets");
  }
  StepOutputs<T> out;
  out.y_o = y_o;
  out.y_p = y_p;
  out.y_n = y_n;
  out.features = backbone_.forward_tapped(images, training);
  if (cfg.enable_rn) {
    out.relations = forward_relations(out.features, heads_, training);
    if (cfg.enable_ac) out.aux = forward_aux(out.relations, heads_, training);
  }
  if (cfg.enable_ld) forward_logit_relations(out.features, heads_, out.relations, training);
  if (cfg.enable_handcrafted_rd) {
    for (const auto &tap : out.features.taps) out.pooled.push_back(pool_features(tap));
  }
  return out;
}

template <typename T>
StepOutputs<T> TorsdModel<T>::forward(const TripletBatch &batch, const TorsdConfig &cfg,
                                      bool training) {
  if constexpr (std::is_same_v<T, float>) {
    return forward(batch.images, batch.y_o, batch.y_p, batch.y_n, cfg, training);
  } else {
    return forward(tensor_cast<T>(batch.images), batch.y_o, batch.y_p, batch.y_n, cfg, training);
  }
}

template <typename T>
void TorsdModel<T>::backward(const StepOutputs<T> &out, const OutputGrads<T> &grads) {
  const std::size_t t = out.triplets();
  const std::size_t k = backbone_.depth();
  const auto anchors = role_rows(t, Role::anchor);
  const auto positives = role_rows(t, Role::positive);
  const auto negatives = role_rows(t, Role::negative);
  std::vector<std::size_t> anchors_twice = anchors;
  anchors_twice.insert(anchors_twice.end(), anchors.begin(), anchors.end());
  const auto first = iota_rows(0, t);
  const auto second = iota_rows(t, t);

  std::vector<Tensor<T>> tap_grads(k);
  auto tap_grad = [&](std::size_t d) -> Tensor<T> & {
    if (tap_grads[d].empty()) tap_grads[d] = Tensor<T>(out.features.taps[d].shape());
    return tap_grads[d];
  };

  if (!out.relations.empty()) {
    for (std::size_t d = 0; d < k; ++d) {
      Tensor<T> dz_pos = grads.z_pos.empty() ? Tensor<T>(out.relations.z_pos[d].shape())
                                             : grads.z_pos[d];
      Tensor<T> dz_neg = grads.z_neg.empty() ? Tensor<T>(out.relations.z_neg[d].shape())
                                             : grads.z_neg[d];
      if (!out.aux.empty()) {
        dz_pos += heads_.aux[d].pos.backward(grads.aux_pos[d]);
        dz_neg += heads_.aux[d].neg.backward(grads.aux_neg[d]);
      }
      const Tensor<T> d_rel = concat_rows(grads.r_pos[d], grads.r_neg[d]);
      const Tensor<T> d_pairs =
          heads_.relation[d].backward(d_rel, concat_rows(dz_pos, dz_neg));
      const auto [d_left, d_right] = split_channels(d_pairs);
      Tensor<T> &g = tap_grad(d);
      add_rows(g, d_left, anchors_twice);
      add_rows(g, take(d_right, first), positives);
      add_rows(g, take(d_right, second), negatives);
    }
  }

  for (std::size_t d = 0; d < grads.pooled.size(); ++d) {
    const Tensor<T> &gp = grads.pooled[d];
    Tensor<T> &g = tap_grad(d);
    const std::size_t area = g.dim(2) * g.dim(3);
    for (std::size_t i = 0; i < gp.numel(); ++i) {
      const T v = gp[i] / static_cast<T>(area);
      T *dst = g.data() + i * area;
      for (std::size_t j = 0; j < area; ++j) dst[j] += v;
    }
  }

  Tensor<T> logits_grad = grads.logits;
  if (!out.relations.logit_r_pos.empty()) {
    const Tensor<T> d_stacked =
        heads_.logit_rib.backward(concat_rows(grads.logit_r_pos, grads.logit_r_neg));
    const auto [d_left, d_right] = split_channels(d_stacked);
    add_rows(logits_grad, d_left, anchors_twice);
    add_rows(logits_grad, take(d_right, first), positives);
    add_rows(logits_grad, take(d_right, second), negatives);
  }
  backbone_.backward(tap_grads, logits_grad);
}

template <typename T>
ParamList<T> TorsdModel<T>::parameters() {
  ParamList<T> params;
  BufferList<T> buffers;
  backbone_.collect(params, buffers);
  heads_.collect(params, buffers);
  return params;
}

template <typename T>
BufferList<T> TorsdModel<T>::buffers() {
  ParamList<T> params;
  BufferList<T> buffers;
  backbone_.collect(params, buffers);
  heads_.collect(params, buffers);
  return buffers;
}

template <typename T>
void TorsdModel<T>::zero_grad() {
  for (auto &p : parameters()) p.param->zero_grad();
}

template <typename T>
std::size_t TorsdModel<T>::parameter_count() {
  std::size_t n = 0;
  for (const auto &p : parameters()) n += p.param->value.numel();
  return n;
}

template <typename T>
TappedBackbone<T> strip_for_inference(const TorsdModel<T> &model) {
  return model.backbone();
}

#define TORSD_INSTANTIATE(T)                                                                  \
  template Tensor<T> pool_features(const Tensor<T> &);                                        \
  template class TorsdModel<T>;                                                               \
  template TappedBackbone<T> strip_for_inference(const TorsdModel<T> &);

TORSD_INSTANTIATE(float)
TORSD_INSTANTIATE(double)

#undef TORSD_INSTANTIATE

} // namespace torsd

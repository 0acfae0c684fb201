// SPDX-License-Identifier: Apache-2.0
#include "torsd/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "torsd/errors.hpp"

namespace torsd {
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr std::uint32_t kMaxRank = 8;
const std::string kMomentumPrefix = "opt.momentum.";

std::uint32_t fnv1a(const void *data, std::size_t bytes) {
  const auto *p = static_cast<const unsigned char *>(data);
  std::uint32_t h = 2166136261u;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 16777619u;
  }
  return h;
}

std::string read_text(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

void write_blob(const fs::path &path, const Tensor<float> &t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const auto rank = static_cast<std::uint32_t>(t.rank());
  out.write(reinterpret_cast<const char *>(&rank), sizeof rank);
  for (std::size_t d : t.shape()) {
    const auto dim = static_cast<std::uint32_t>(d);
    out.write(reinterpret_cast<const char *>(&dim), sizeof dim);
  }
  const std::size_t bytes = t.numel() * sizeof(float);
  out.write(reinterpret_cast<const char *>(t.data()), static_cast<std::streamsize>(bytes));
  const std::uint32_t sum = fnv1a(t.data(), bytes);
  out.write(reinterpret_cast<const char *>(&sum), sizeof sum);
  if (!out) throw IoError("cannot write " + path.string());
}

Tensor<float> read_blob(const fs::path &path, const std::string &name) {
  const std::string raw = [&] {
    try {
      return read_text(path);
    } catch (const IoError &) {
      throw IoError("parameter '" + name + "': missing blob " + path.filename().string());
    }
  }();
  auto fail = [&](const std::string &why) {
    return IoError("parameter '" + name + "': corrupt blob (" + why + ")");
  };
  std::size_t pos = 0;
  auto take_u32 = [&]() {
    if (pos + 4 > raw.size()) throw fail("truncated");
    std::uint32_t v;
    std::memcpy(&v, raw.data() + pos, 4);
    pos += 4;
    return v;
  };
  const std::uint32_t rank = take_u32();
  if (rank > kMaxRank) throw fail("rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(take_u32());
  const std::size_t n = rank == 0 ? 0 : shape_numel(shape);
  const std::size_t bytes = n * sizeof(float);
  if (raw.size() != pos + bytes + 4) throw fail("size mismatch");
  std::vector<float> values(n);
  std::memcpy(values.data(), raw.data() + pos, bytes);
  pos += bytes;
  if (take_u32() != fnv1a(values.data(), bytes)) throw fail("checksum mismatch");
  return Tensor<float>(shape, std::move(values));
}

std::string blob_file(const std::string &name) { return name + ".bin"; }

bool is_backbone_tensor(const std::string &name) {
  return name.rfind("backbone.", 0) == 0 || name.rfind("norm.", 0) == 0;
}

} // namespace

void write_checkpoint(const fs::path &dir, const Checkpoint &ckpt) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  // Drop blobs from an earlier write so the directory mirrors `ckpt` exactly.
  for (const auto &entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".bin") fs::remove(entry.path());
  }
  std::ostringstream index;
  for (const auto &[name, tensor] : ckpt.tensors) {
    write_blob(dir / blob_file(name), tensor);
    index << name << ' ' << blob_file(name) << '\n';
  }
  write_text(dir / "index.txt", index.str());
  write_text(dir / "manifest.txt", serialize_manifest(ckpt.manifest));
  write_text(dir / "state.txt", "epoch=" + std::to_string(ckpt.epoch) +
                                    "\nstep=" + std::to_string(ckpt.step) + "\n");
}

Checkpoint read_checkpoint(const fs::path &dir) {
  if (!fs::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir.string());
  Checkpoint ckpt;
  try {
    ckpt.manifest = parse_manifest(read_text(dir / "manifest.txt"));
  } catch (const IoError &) {
    throw;
  } catch (const Error &e) {
    throw IoError("bad manifest in " + dir.string() + ": " + e.what());
  }
  std::istringstream index(read_text(dir / "index.txt"));
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, file;
    if (!(ls >> name >> file)) throw IoError("bad index line: '" + line + "'");
    ckpt.tensors.emplace(name, read_blob(dir / file, name));
  }
  if (fs::exists(dir / "state.txt")) {
    std::istringstream state(read_text(dir / "state.txt"));
    while (std::getline(state, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::size_t value = std::stoull(line.substr(eq + 1));
      if (key == "epoch") ckpt.epoch = value;
      if (key == "step") ckpt.step = value;
    }
  }
  return ckpt;
}

Checkpoint capture_checkpoint(TorsdModel<float> &model, const RunManifest &manifest,
                              const ChannelStats &stats, const Sgd<float> *optimizer,
                              std::size_t epoch, std::size_t step) {
  Checkpoint ckpt;
  ckpt.manifest = manifest;
  ckpt.epoch = epoch;
  ckpt.step = step;
  for (const auto &p : model.parameters()) ckpt.tensors.emplace(p.name, p.param->value);
  for (const auto &b : model.buffers()) ckpt.tensors.emplace(b.name, *b.buffer);
  const std::size_t c = stats.mean.size();
  ckpt.tensors.emplace("norm.mean", Tensor<float>({c}, stats.mean));
  ckpt.tensors.emplace("norm.std", Tensor<float>({c}, stats.stddev));
  if (optimizer) {
    for (const auto &[name, v] : optimizer->state()) {
      ckpt.tensors.emplace(kMomentumPrefix + name, v);
    }
  }
  return ckpt;
}

namespace {

void copy_tensor(const Checkpoint &ckpt, const std::string &name, Tensor<float> &dst) {
  const auto it = ckpt.tensors.find(name);
  if (it == ckpt.tensors.end()) throw IoError("parameter '" + name + "' missing from checkpoint");
  if (it->second.shape() != dst.shape()) {
    throw IoError("parameter '" + name + "': checkpoint shape " + shape_str(it->second.shape()) +
                  " vs model " + shape_str(dst.shape()));
  }
  dst = it->second;
}

} // namespace

void restore_checkpoint(TorsdModel<float> &model, const Checkpoint &ckpt, Sgd<float> *optimizer) {
  for (const auto &p : model.parameters()) copy_tensor(ckpt, p.name, p.param->value);
  for (const auto &b : model.buffers()) copy_tensor(ckpt, b.name, *b.buffer);
  if (optimizer) {
    optimizer->state().clear();
    for (const auto &[name, t] : ckpt.tensors) {
      if (name.rfind(kMomentumPrefix, 0) == 0) {
        optimizer->state().emplace(name.substr(kMomentumPrefix.size()), t);
      }
    }
  }
}

Checkpoint strip_checkpoint(const Checkpoint &ckpt) {
  Checkpoint out;
  out.manifest = ckpt.manifest;
  out.manifest.stripped = true;
  out.epoch = ckpt.epoch;
  out.step = ckpt.step;
  for (const auto &[name, t] : ckpt.tensors) {
    if (is_backbone_tensor(name)) out.tensors.emplace(name, t);
  }
  return out;
}

BackboneSpec backbone_spec(const RunManifest &manifest) {
  BackboneSpec spec = parse_backbone_id(manifest.backbone_id);
  spec.num_classes = manifest.num_classes;
  spec.channels = manifest.input_channels;
  spec.height = manifest.input_height;
  spec.width = manifest.input_width;
  return spec;
}

TorsdModel<float> model_from_checkpoint(const Checkpoint &ckpt) {
  if (ckpt.manifest.stripped) {
    throw IoError("checkpoint is stripped; relation heads are not available");
  }
  TorsdModel<float> model(backbone_spec(ckpt.manifest), ckpt.manifest.config.embed_dim,
                          ckpt.manifest.config.seed);
  restore_checkpoint(model, ckpt);
  return model;
}

TappedBackbone<float> backbone_from_checkpoint(const Checkpoint &ckpt) {
  TappedBackbone<float> net =
      build_backbone<float>(backbone_spec(ckpt.manifest), ckpt.manifest.config.seed);
  ParamList<float> params;
  BufferList<float> buffers;
  net.collect(params, buffers);
  for (const auto &p : params) copy_tensor(ckpt, p.name, p.param->value);
  for (const auto &b : buffers) copy_tensor(ckpt, b.name, *b.buffer);
  return net;
}

ChannelStats stats_from_checkpoint(const Checkpoint &ckpt) {
  const auto mean = ckpt.tensors.find("norm.mean");
  const auto sd = ckpt.tensors.find("norm.std");
  if (mean == ckpt.tensors.end() || sd == ckpt.tensors.end()) {
    throw IoError("checkpoint lacks input normalization (norm.mean / norm.std)");
  }
  ChannelStats stats;
  stats.mean = mean->second.storage();
  stats.stddev = sd->second.storage();
  return stats;
}

} // namespace torsd

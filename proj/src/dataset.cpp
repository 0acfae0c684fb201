// SPDX-License-Identifier: Apache-2.0
#include "torsd/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "torsd/errors.hpp"

namespace torsd {
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "packed dataset and checkpoint IO assume a little-endian host");

void validate_dataset(const LabeledDataset &ds) {
  if (ds.images.size() != ds.labels.size()) {
    throw DataError("dataset has " + std::to_string(ds.images.size()) + " images but " +
                    std::to_string(ds.labels.size()) + " labels");
  }
  if (ds.num_classes < 2) throw DataError("dataset needs at least 2 classes");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < 0 || static_cast<std::size_t>(ds.labels[i]) >= ds.num_classes) {
      throw DataError("label " + std::to_string(ds.labels[i]) + " of sample " +
                      std::to_string(i) + " outside [0, " + std::to_string(ds.num_classes) + ")");
    }
    if (ds.images[i].size() != ds.image_size()) {
      throw DataError("sample " + std::to_string(i) + " has " +
                      std::to_string(ds.images[i].size()) + " values, expected " +
                      std::to_string(ds.image_size()));
    }
  }
  const auto counts = class_counts(ds);
  if (std::none_of(counts.begin(), counts.end(), [](std::size_t c) { return c >= 2; })) {
    throw DataError("dataset needs at least one class with two samples");
  }
}

std::vector<std::size_t> class_counts(const LabeledDataset &ds) {
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (int y : ds.labels) {
    if (y >= 0 && static_cast<std::size_t>(y) < counts.size()) ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

LabeledDataset subset(const LabeledDataset &ds, const std::vector<std::size_t> &indices) {
  LabeledDataset out;
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  out.num_classes = ds.num_classes;
  out.id = ds.id;
  out.images.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    out.images.push_back(ds.images.at(i));
    out.labels.push_back(ds.labels.at(i));
  }
  return out;
}

namespace {

template <typename T>
void write_le(std::ostream &os, T v) {
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream &is, const std::string &what) {
  T v{};
  if (!is.read(reinterpret_cast<char *>(&v), sizeof(T))) {
    throw DataError("truncated dataset while reading " + what);
  }
  return v;
}

// Binary PGM/PPM with maxval <= 255.
std::vector<float> read_pnm(const fs::path &path, std::size_t &channels, std::size_t &height,
                            std::size_t &width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") {
    throw DataError(path.string() + ": only binary PGM (P5) / PPM (P6) images are supported");
  }
  auto next_int = [&]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return std::stoul(tok);
    }
    throw DataError(path.string() + ": truncated header");
  };
  width = next_int();
  height = next_int();
  const auto maxval = next_int();
  if (maxval == 0 || maxval > 255) throw DataError(path.string() + ": unsupported maxval");
  in.get();
  channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(channels * height * width);
  if (!in.read(reinterpret_cast<char *>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  std::vector<float> chw(raw.size());
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        chw[(c * height + y) * width + x] =
            static_cast<float>(raw[(y * width + x) * channels + c]) / static_cast<float>(maxval);
  return chw;
}

LabeledDataset load_image_directory(const fs::path &dir, bool validate) {
  const fs::path index = dir / "index.txt";
  std::ifstream in(index);
  if (!in) throw DataError("dataset directory " + dir.string() + " has no index.txt");
  LabeledDataset ds;
  ds.id = dir.string();
  std::string line;
  int max_label = -1;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string rel;
    int label = -1;
    if (!(ls >> rel >> label)) throw DataError("malformed index line: '" + line + "'");
    std::size_t c = 0, h = 0, w = 0;
    auto img = read_pnm(dir / rel, c, h, w);
    if (first) {
      ds.channels = c;
      ds.height = h;
      ds.width = w;
      first = false;
    } else if (c != ds.channels || h != ds.height || w != ds.width) {
      throw DataError(rel + ": image geometry differs from the first sample");
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
  }
  ds.num_classes = static_cast<std::size_t>(max_label + 1);
  if (validate) validate_dataset(ds);
  return ds;
}

} // namespace

void save_packed(const LabeledDataset &ds, const fs::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.height));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.width));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.channels));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto &img = ds.images[i];
    for (std::size_t y = 0; y < ds.height; ++y)
      for (std::size_t x = 0; x < ds.width; ++x)
        for (std::size_t c = 0; c < ds.channels; ++c)
          write_le<float>(out, img[(c * ds.height + y) * ds.width + x]);
    write_le<std::int32_t>(out, ds.labels[i]);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

LabeledDataset load_packed(const fs::path &path, bool validate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  LabeledDataset ds;
  ds.id = path.string();
  const auto count = read_le<std::uint32_t>(in, "header");
  ds.height = read_le<std::uint32_t>(in, "header");
  ds.width = read_le<std::uint32_t>(in, "header");
  ds.channels = read_le<std::uint32_t>(in, "header");
  ds.num_classes = read_le<std::uint32_t>(in, "header");
  ds.images.reserve(count);
  ds.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::vector<float> img(ds.image_size());
    for (std::size_t y = 0; y < ds.height; ++y)
      for (std::size_t x = 0; x < ds.width; ++x)
        for (std::size_t c = 0; c < ds.channels; ++c)
          img[(c * ds.height + y) * ds.width + x] = read_le<float>(in, "pixels");
    ds.images.push_back(std::move(img));
    ds.labels.push_back(read_le<std::int32_t>(in, "label"));
  }
  if (validate) validate_dataset(ds);
  return ds;
}

void save_image_directory(const LabeledDataset &ds, const fs::path &dir) {
  if (ds.channels != 1 && ds.channels != 3) {
    throw DataError("image directories support 1 or 3 channels");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream index(dir / "index.txt");
  if (!index) throw IoError("cannot write " + (dir / "index.txt").string());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string name = "img_" + std::to_string(i) + (ds.channels == 3 ? ".ppm" : ".pgm");
    std::ofstream img(dir / name, std::ios::binary);
    if (!img) throw IoError("cannot write " + (dir / name).string());
    img << (ds.channels == 3 ? "P6" : "P5") << '\n' << ds.width << ' ' << ds.height << "\n255\n";
    for (std::size_t y = 0; y < ds.height; ++y)
      for (std::size_t x = 0; x < ds.width; ++x)
        for (std::size_t c = 0; c < ds.channels; ++c) {
          const float v = std::clamp(ds.images[i][(c * ds.height + y) * ds.width + x], 0.0f, 1.0f);
          img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
        }
    index << name << ' ' << ds.labels[i] << '\n';
  }
}

LabeledDataset load_dataset(const fs::path &path, bool validate) {
  std::error_code ec;
  if (fs::is_directory(path, ec)) return load_image_directory(path, validate);
  if (fs::is_regular_file(path, ec)) return load_packed(path, validate);
  throw DataError("dataset path " + path.string() + " does not exist");
}

ChannelStats compute_channel_stats(const LabeledDataset &ds) {
  ChannelStats stats;
  stats.mean.assign(ds.channels, 0.0f);
  stats.stddev.assign(ds.channels, 1.0f);
  const std::size_t area = ds.height * ds.width;
  for (std::size_t c = 0; c < ds.channels; ++c) {
    double sum = 0, sq = 0;
    for (const auto &img : ds.images) {
      for (std::size_t j = 0; j < area; ++j) sum += img[c * area + j];
    }
    const double n = static_cast<double>(area * ds.size());
    const double mean = n > 0 ? sum / n : 0.0;
    for (const auto &img : ds.images) {
      for (std::size_t j = 0; j < area; ++j) {
        const double d = img[c * area + j] - mean;
        sq += d * d;
      }
    }
    const double sd = n > 0 ? std::sqrt(sq / n) : 1.0;
    stats.mean[c] = static_cast<float>(mean);
    stats.stddev[c] = sd > 1e-8 ? static_cast<float>(sd) : 1.0f;
  }
  return stats;
}

void normalize_image(std::vector<float> &image, const ChannelStats &stats, std::size_t height,
                     std::size_t width) {
  const std::size_t area = height * width;
  for (std::size_t c = 0; c < stats.mean.size(); ++c) {
    for (std::size_t j = 0; j < area; ++j) {
      image[c * area + j] = (image[c * area + j] - stats.mean[c]) / stats.stddev[c];
    }
  }
}

} // namespace torsd

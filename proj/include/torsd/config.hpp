// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace torsd {

/// Loss weights, ablation toggles and relation-head shape for one run.
struct TorsdConfig {
  double alpha = 0.01;   // triplet
  double beta = 0.01;    // relation distillation
  double gamma_p = 0.2;  // positive auxiliary classifier
  double gamma_n = 0.05; // negative auxiliary classifier
  double lambda_mix = 0.8;
  double sigma = 0.01; // logit calibration
  double margin = 1.0;
  std::size_t embed_dim = 64;
  double kl_temperature = 1.0;
  bool enable_rn = true;
  bool enable_ac = true;
  bool enable_ld = true;
  bool enable_handcrafted_rd = false;
  std::uint64_t seed = 0;

  bool operator==(const TorsdConfig &) const = default;
};

enum class Scheduler { one_cycle, constant };

struct OptimConfig {
  double peak_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t epochs = 300;
  std::size_t batch_size = 129;
  Scheduler scheduler = Scheduler::one_cycle;
  double grad_clip = 0; // global gradient-norm cap; 0 disables

  bool operator==(const OptimConfig &) const = default;
};

/// Best-performing hyperparameters reported for the method.
TorsdConfig default_paper_config();

/// One entry per violated invariant; empty when both configs are valid.
struct ValidationIssue {
  std::string key;
  std::string message;
};
std::vector<ValidationIssue> validate_config(const TorsdConfig &cfg, const OptimConfig &opt);

/// Throws ConfigValidationError naming the first offending key.
void require_valid(const TorsdConfig &cfg, const OptimConfig &opt);

/// Sets one field from its textual form. Throws ConfigSyntaxError for unknown
/// keys or unparsable values. No validation.
void set_config_value(TorsdConfig &cfg, OptimConfig &opt, const std::string &key,
                      const std::string &value);

/// Parses a `key=value` document (`#` comments, blank lines allowed) on top
/// of the defaults, then validates.
std::pair<TorsdConfig, OptimConfig> parse_config(const std::string &text);
std::pair<TorsdConfig, OptimConfig> load_config(const std::filesystem::path &path);

/// Every key, one per line, in a fixed order. parse_config(serialize_config(c)) == c.
std::string serialize_config(const TorsdConfig &cfg, const OptimConfig &opt);

std::string scheduler_name(Scheduler s);

/// Provenance written next to every checkpoint.
struct RunManifest {
  TorsdConfig config;
  OptimConfig optim;
  std::string dataset_id;
  std::string backbone_id; // e.g. "toy_cnn:width=8" or "resnet18"
  std::size_t num_classes = 0;
  std::size_t input_channels = 3;
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  bool stripped = false;
  std::string start_time;
  std::string version;
};

std::string serialize_manifest(const RunManifest &m);
RunManifest parse_manifest(const std::string &text);

/// UTC timestamp in ISO-8601 form.
std::string utc_timestamp();

extern const char *const kVersion;

} // namespace torsd

// SPDX-License-Identifier: Apache-2.0
#include "torsd/config.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "torsd/errors.hpp"

namespace torsd {

const char *const kVersion = "torsd 0.1.0";

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_real(const std::string &key, const std::string &value) {
  double out = 0;
  const char *first = value.data();
  const char *last = first + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || !std::isfinite(out)) {
    throw ConfigSyntaxError("key '" + key + "': '" + value + "' is not a finite number");
  }
  return out;
}

std::uint64_t parse_unsigned(const std::string &key, const std::string &value) {
  std::uint64_t out = 0;
  const char *first = value.data();
  const char *last = first + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigSyntaxError("key '" + key + "': '" + value + "' is not a nonnegative integer");
  }
  return out;
}

bool parse_bool(const std::string &key, const std::string &value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigSyntaxError("key '" + key + "': '" + value + "' is not a boolean");
}

std::string fmt_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Line-oriented key=value reader shared by config and manifest parsing.
template <typename Fn>
void for_each_entry(const std::string &text, Fn &&fn) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigSyntaxError("line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigSyntaxError("line " + std::to_string(lineno) + ": empty key");
    fn(key, value);
  }
}

} // namespace

TorsdConfig default_paper_config() { return TorsdConfig{}; }

std::string scheduler_name(Scheduler s) {
  return s == Scheduler::one_cycle ? "one_cycle" : "constant";
}

std::vector<ValidationIssue> validate_config(const TorsdConfig &cfg, const OptimConfig &opt) {
  std::vector<ValidationIssue> issues;
  auto nonneg = [&](const char *key, double v) {
    if (!(v >= 0)) issues.push_back({key, std::string(key) + " must be >= 0"});
  };
  nonneg("alpha", cfg.alpha);
  nonneg("beta", cfg.beta);
  nonneg("gamma_p", cfg.gamma_p);
  nonneg("gamma_n", cfg.gamma_n);
  nonneg("sigma", cfg.sigma);
  nonneg("margin", cfg.margin);
  if (!(cfg.lambda_mix >= 0 && cfg.lambda_mix <= 1)) {
    issues.push_back({"lambda_mix", "lambda_mix must lie in [0, 1]"});
  }
  if (cfg.embed_dim < 1) issues.push_back({"embed_dim", "embed_dim must be >= 1"});
  if (!(cfg.kl_temperature > 0)) {
    issues.push_back({"kl_temperature", "kl_temperature must be > 0"});
  }
  if (cfg.enable_ac && !cfg.enable_rn) {
    issues.push_back({"enable_ac", "enable_ac requires enable_rn (auxiliary classifiers read "
                                   "relation-network projections)"});
  }
  if (cfg.enable_rn && cfg.enable_handcrafted_rd) {
    issues.push_back({"enable_handcrafted_rd",
                      "enable_handcrafted_rd and enable_rn are mutually exclusive"});
  }
  if (!(opt.peak_lr > 0)) issues.push_back({"peak_lr", "peak_lr must be > 0"});
  if (!(opt.momentum >= 0 && opt.momentum < 1)) {
    issues.push_back({"momentum", "momentum must lie in [0, 1)"});
  }
  if (!(opt.weight_decay >= 0)) issues.push_back({"weight_decay", "weight_decay must be >= 0"});
  if (!(opt.grad_clip >= 0)) issues.push_back({"grad_clip", "grad_clip must be >= 0"});
  if (opt.epochs < 1) issues.push_back({"epochs", "epochs must be >= 1"});
  if (opt.batch_size < 1 || opt.batch_size % 3 != 0) {
    issues.push_back({"batch_size", "batch_size must be a positive multiple of 3 (got " +
                                        std::to_string(opt.batch_size) + ")"});
  }
  return issues;
}

void require_valid(const TorsdConfig &cfg, const OptimConfig &opt) {
  auto issues = validate_config(cfg, opt);
  if (!issues.empty()) throw ConfigValidationError(issues.front().message, issues.front().key);
}

void set_config_value(TorsdConfig &cfg, OptimConfig &opt, const std::string &key,
                      const std::string &value) {
  if (key == "alpha") cfg.alpha = parse_real(key, value);
  else if (key == "beta") cfg.beta = parse_real(key, value);
  else if (key == "gamma_p") cfg.gamma_p = parse_real(key, value);
  else if (key == "gamma_n") cfg.gamma_n = parse_real(key, value);
  else if (key == "lambda_mix") cfg.lambda_mix = parse_real(key, value);
  else if (key == "sigma") cfg.sigma = parse_real(key, value);
  else if (key == "margin") cfg.margin = parse_real(key, value);
  else if (key == "embed_dim") cfg.embed_dim = parse_unsigned(key, value);
  else if (key == "kl_temperature") cfg.kl_temperature = parse_real(key, value);
  else if (key == "enable_rn") cfg.enable_rn = parse_bool(key, value);
  else if (key == "enable_ac") cfg.enable_ac = parse_bool(key, value);
  else if (key == "enable_ld") cfg.enable_ld = parse_bool(key, value);
  else if (key == "enable_handcrafted_rd") cfg.enable_handcrafted_rd = parse_bool(key, value);
  else if (key == "seed") cfg.seed = parse_unsigned(key, value);
  else if (key == "peak_lr") opt.peak_lr = parse_real(key, value);
  else if (key == "momentum") opt.momentum = parse_real(key, value);
  else if (key == "weight_decay") opt.weight_decay = parse_real(key, value);
  else if (key == "epochs") opt.epochs = parse_unsigned(key, value);
  else if (key == "batch_size") opt.batch_size = parse_unsigned(key, value);
  else if (key == "grad_clip") opt.grad_clip = parse_real(key, value);
  else if (key == "scheduler") {
    if (value == "one_cycle") opt.scheduler = Scheduler::one_cycle;
    else if (value == "constant") opt.scheduler = Scheduler::constant;
    else throw ConfigSyntaxError("key 'scheduler': expected one_cycle or constant, got '" + value + "'");
  } else {
    throw ConfigSyntaxError("unknown key '" + key + "'");
  }
}

std::pair<TorsdConfig, OptimConfig> parse_config(const std::string &text) {
  TorsdConfig cfg = default_paper_config();
  OptimConfig opt;
  for_each_entry(text, [&](const std::string &key, const std::string &value) {
    set_config_value(cfg, opt, key, value);
  });
  require_valid(cfg, opt);
  return {cfg, opt};
}

std::pair<TorsdConfig, OptimConfig> load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const TorsdConfig &cfg, const OptimConfig &opt) {
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "alpha=" << fmt_real(cfg.alpha) << '\n'
     << "beta=" << fmt_real(cfg.beta) << '\n'
     << "gamma_p=" << fmt_real(cfg.gamma_p) << '\n'
     << "gamma_n=" << fmt_real(cfg.gamma_n) << '\n'
     << "lambda_mix=" << fmt_real(cfg.lambda_mix) << '\n'
     << "sigma=" << fmt_real(cfg.sigma) << '\n'
     << "margin=" << fmt_real(cfg.margin) << '\n'
     << "embed_dim=" << cfg.embed_dim << '\n'
     << "kl_temperature=" << fmt_real(cfg.kl_temperature) << '\n'
     << "enable_rn=" << b(cfg.enable_rn) << '\n'
     << "enable_ac=" << b(cfg.enable_ac) << '\n'
     << "enable_ld=" << b(cfg.enable_ld) << '\n'
     << "enable_handcrafted_rd=" << b(cfg.enable_handcrafted_rd) << '\n'
     << "seed=" << cfg.seed << '\n'
     << "peak_lr=" << fmt_real(opt.peak_lr) << '\n'
     << "momentum=" << fmt_real(opt.momentum) << '\n'
     << "weight_decay=" << fmt_real(opt.weight_decay) << '\n'
     << "epochs=" << opt.epochs << '\n'
     << "batch_size=" << opt.batch_size << '\n'
     << "scheduler=" << scheduler_name(opt.scheduler) << '\n'
     << "grad_clip=" << fmt_real(opt.grad_clip) << '\n';
  return os.str();
}

std::string serialize_manifest(const RunManifest &m) {
  std::ostringstream os;
  os << "# run manifest\n"
     << "version=" << m.version << '\n'
     << "start_time=" << m.start_time << '\n'
     << "dataset=" << m.dataset_id << '\n'
     << "backbone=" << m.backbone_id << '\n'
     << "num_classes=" << m.num_classes << '\n'
     << "input_channels=" << m.input_channels << '\n'
     << "input_height=" << m.input_height << '\n'
     << "input_width=" << m.input_width << '\n'
     << "stripped=" << (m.stripped ? "true" : "false") << '\n'
     << serialize_config(m.config, m.optim);
  return os.str();
}

RunManifest parse_manifest(const std::string &text) {
  RunManifest m;
  m.config = default_paper_config();
  for_each_entry(text, [&](const std::string &key, const std::string &value) {
    if (key == "version") m.version = value;
    else if (key == "start_time") m.start_time = value;
    else if (key == "dataset") m.dataset_id = value;
    else if (key == "backbone") m.backbone_id = value;
    else if (key == "num_classes") m.num_classes = parse_unsigned(key, value);
    else if (key == "input_channels") m.input_channels = parse_unsigned(key, value);
    else if (key == "input_height") m.input_height = parse_unsigned(key, value);
    else if (key == "input_width") m.input_width = parse_unsigned(key, value);
    else if (key == "stripped") m.stripped = parse_bool(key, value);
    else set_config_value(m.config, m.optim, key, value);
  });
  require_valid(m.config, m.optim);
  return m;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

} // namespace torsd

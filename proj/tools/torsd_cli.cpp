// SPDX-License-Identifier: Apache-2.0
// torsd: train / eval / analyze / export / gradcheck / sample-check / synth.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>

#include "torsd/checkpoint.hpp"
#include "torsd/gradcheck.hpp"
#include "torsd/report.hpp"
#include "torsd/separability.hpp"
#include "torsd/synthetic.hpp"
#include "torsd/trainer.hpp"
#include "torsd/tsne.hpp"

namespace fs = std::filesystem;
using namespace torsd;

namespace {

enum Exit : int { kOk = 0, kConfig = 1, kData = 2, kDivergence = 3, kIo = 4 };

constexpr double kGradTolerance = 1e-4;

struct CommonArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string ckpt;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

std::pair<TorsdConfig, OptimConfig> resolve_config(const CommonArgs &a) {
  auto [cfg, opt] = a.config.empty() ? std::make_pair(default_paper_config(), OptimConfig{})
                                     : load_config(a.config);
  for (const auto &kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigSyntaxError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, opt, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed) cfg.seed = *a.seed;
  require_valid(cfg, opt);
  return {cfg, opt};
}

void print_eval(const EvalReport &r) {
  std::cout << std::fixed << std::setprecision(4) << "accuracy " << r.accuracy << " loss "
            << r.loss << " samples " << r.count << '\n';
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    std::cout << "  class " << c << ": " << r.per_class[c] << " (" << r.class_counts[c]
              << ")\n";
  }
  std::cout.unsetf(std::ios::fixed);
}

void write_eval_csv(const fs::path &path, const EvalReport &r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(9) << "scope,count,accuracy,loss\n"
      << "all," << r.count << ',' << r.accuracy << ',' << r.loss << '\n';
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    out << "class" << c << ',' << r.class_counts[c] << ',' << r.per_class[c] << ",\n";
  }
}

fs::path out_dir_or_cwd(const std::string &out) {
  fs::path dir = out.empty() ? fs::current_path() : fs::path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  return dir;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string backbone = "toy_cnn:width=8";
  std::string eval_data;
  std::string resume;
  std::size_t checkpoint_every = 10;
  bool no_augment = false;
};

int cmd_train(const CommonArgs &a, const TrainArgs &t) {
  const auto [cfg, opt] = resolve_config(a);
  const LabeledDataset data = load_dataset(a.data);
  std::optional<LabeledDataset> eval_set;
  if (!t.eval_data.empty()) eval_set = load_dataset(t.eval_data);

  TrainOptions options;
  options.backbone = parse_backbone_id(t.backbone);
  options.checkpoint_every = t.checkpoint_every;
  options.augment = !t.no_augment;
  options.eval_set = eval_set ? &*eval_set : nullptr;
  options.resume_from = t.resume;
  const fs::path out = a.out.empty() ? fs::path("run") : fs::path(a.out);
  const TrainResult result = train(data, cfg, opt, out, options);
  if (!result.history.empty()) {
    std::cout << "epoch " << result.state.epoch << ' ';
    print_eval(result.history.back());
  }
  std::cout << "checkpoint " << result.last_checkpoint.string() << '\n';
  return kOk;
}

int cmd_eval(const CommonArgs &a) {
  const Checkpoint ckpt = read_checkpoint(a.ckpt);
  const LabeledDataset data = load_dataset(a.data);
  TappedBackbone<float> net = backbone_from_checkpoint(ckpt);
  const EvalReport report = evaluate(net, data, stats_from_checkpoint(ckpt));
  print_eval(report);
  write_eval_csv(out_dir_or_cwd(a.out) / "eval.csv", report);
  return kOk;
}

int cmd_export(const CommonArgs &a) {
  if (a.out.empty()) throw ArgumentError("export needs --out");
  const Checkpoint ckpt = read_checkpoint(a.ckpt);
  const Checkpoint stripped = strip_checkpoint(ckpt);
  write_checkpoint(a.out, stripped);
  TappedBackbone<float> net = backbone_from_checkpoint(stripped);
  std::cout << "exported " << stripped.tensors.size() << " tensors, "
            << net.parameter_count() << " parameters to " << a.out << '\n';
  return kOk;
}

struct AnalyzeArgs {
  std::size_t depth = 0; // 0: every depth
  std::size_t max_samples = 500;
  std::size_t iterations = 1000;
};

int cmd_analyze(const CommonArgs &a, const AnalyzeArgs &an) {
  const Checkpoint ckpt = read_checkpoint(a.ckpt);
  LabeledDataset data = load_dataset(a.data);
  const std::uint64_t seed = a.seed.value_or(0);
  if (an.max_samples > 0 && data.size() > an.max_samples) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(an.max_samples);
    std::sort(idx.begin(), idx.end());
    data = subset(data, idx);
  }
  TappedBackbone<float> net = backbone_from_checkpoint(ckpt);
  const ChannelStats stats = stats_from_checkpoint(ckpt);
  std::vector<std::size_t> depths;
  if (an.depth > 0) {
    depths.push_back(an.depth);
  } else {
    for (std::size_t d = 1; d <= net.depth(); ++d) depths.push_back(d);
  }
  std::vector<Separability> seps;
  std::vector<EmbeddingSet> embeddings;
  TsneOptions tsne;
  tsne.seed = seed;
  tsne.iterations = an.iterations;
  for (std::size_t d : depths) {
    const DepthFeatureSet fs = extract_depth_features(net, data, d, stats);
    seps.push_back(sse_ssb(fs));
    embeddings.push_back({d, embed_2d(fs, tsne), fs.labels});
    const auto &s = seps.back();
    std::cout << "depth " << d << " SSE " << s.sse << " SSB " << s.ssb << " ratio "
              << (s.ratio ? std::to_string(*s.ratio) : std::string("undefined")) << '\n';
  }
  emit_report(seps, embeddings, {}, out_dir_or_cwd(a.out));
  return kOk;
}

int cmd_gradcheck(const CommonArgs &a, std::size_t seeds) {
  const auto [cfg, opt] = resolve_config(a);
  (void)opt;
  bool ok = true;
  const std::uint64_t base = a.seed.value_or(0);
  for (std::uint64_t s = base; s < base + seeds; ++s) {
    GradcheckProblem problem = tiny_gradcheck_problem(s);
    const GradcheckReport report = gradcheck(problem, cfg);
    std::cout << "seed " << s << " (" << problem.model.parameter_count()
              << " parameters): max rel err " << report.max_rel_err << '\n';
    for (const auto &g : report.groups) {
      std::cout << "  " << std::left << std::setw(32) << g.name << std::right << std::setw(6)
                << g.size << "  " << g.max_rel_err << (g.finite ? "" : "  NON-FINITE") << '\n';
    }
    ok = ok && report.passed(kGradTolerance);
    if (cfg.enable_rn && cfg.enable_ac) {
      GradcheckProblem fresh = tiny_gradcheck_problem(s);
      for (const auto &t : teacher_path_gradients(fresh, cfg)) {
        if (t.max_abs_grad != 0.0) {
          std::cout << "  teacher path leaks into " << t.name << ": " << t.max_abs_grad << '\n';
          ok = false;
        }
      }
    }
  }
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << kGradTolerance
            << ")\n";
  return ok ? kOk : kConfig;
}

int cmd_sample_check(const CommonArgs &a, std::size_t epochs) {
  const LabeledDataset data = load_dataset(a.data, /*validate=*/false);
  const std::uint64_t seed = a.seed.value_or(0);
  std::size_t failures = 0, triplets = 0, dropped = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::mt19937_64 rng(epoch_seed(seed, e));
    const EpochTriplets epoch = sample_epoch_triplets(data.labels, data.num_classes, rng);
    triplets += epoch.triplets.size();
    dropped += epoch.dropped;
    for (const auto &p : check_partition(data.labels, epoch)) {
      std::cout << "epoch " << e << ": " << p << '\n';
      ++failures;
    }
  }
  std::cout << epochs << " epochs, " << triplets << " triplets, " << dropped
            << " dropped, " << failures << " violations\n";
  return failures == 0 ? kOk : kData;
}

struct SynthArgs {
  std::string kind = "gratings";
  std::string format = "packed";
  SyntheticSpec spec;
};

int cmd_synth(const CommonArgs &a, SynthArgs s) {
  if (a.out.empty()) throw ArgumentError("synth needs --out");
  if (a.seed) s.spec.seed = *a.seed;
  if (s.kind == "blobs") {
    s.spec.kind = SyntheticKind::blobs;
  } else if (s.kind != "gratings") {
    throw ArgumentError("unknown synthetic kind '" + s.kind + "'");
  }
  const LabeledDataset ds = make_synthetic(s.spec);
  if (s.format == "dir") {
    save_image_directory(ds, a.out);
  } else {
    save_packed(ds, a.out);
  }
  std::cout << "wrote " << ds.size() << " images (" << ds.num_classes << " classes) to " << a.out
            << '\n';
  return kOk;
}

int report_error(const char *kind, const std::exception &e, int code) {
  std::cerr << "error: " << kind << ": " << e.what() << '\n';
  return code;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Task-oriented relational self-distillation training toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_config = [&](CLI::App *cmd) {
    cmd->add_option("--config", common.config, "key=value config file (defaults when omitted)");
    cmd->add_option("--set", common.sets, "override one config key, e.g. --set enable_ac=false")
        ->take_all();
  };
  auto add_seed = [&](CLI::App *cmd) {
    cmd->add_option("--seed", common.seed, "seed override");
  };

  TrainArgs train_args;
  auto *train_cmd = app.add_subcommand("train", "train a model and write logs and checkpoints");
  add_config(train_cmd);
  add_seed(train_cmd);
  train_cmd->add_option("--data", common.data, "training dataset (packed file or directory)")
      ->required();
  train_cmd->add_option("--out", common.out, "run directory")->required();
  train_cmd->add_option("--eval-data", train_args.eval_data,
                        "dataset evaluated after each epoch (training split when omitted)");
  train_cmd->add_option("--backbone", train_args.backbone,
                        "toy_cnn:width=<w> or resnet18")->capture_default_str();
  train_cmd->add_option("--checkpoint-every", train_args.checkpoint_every,
                        "epochs between checkpoints")->capture_default_str();
  train_cmd->add_option("--resume", train_args.resume, "checkpoint directory to continue from");
  train_cmd->add_flag("--no-augment", train_args.no_augment, "disable crop/flip/cutout");

  auto *eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", common.ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--data", common.data, "dataset")->required();
  eval_cmd->add_option("--out", common.out, "directory for eval.csv (current directory when omitted)");

  auto *export_cmd = app.add_subcommand("export", "write a backbone-only checkpoint");
  export_cmd->add_option("--ckpt", common.ckpt, "checkpoint directory")->required();
  export_cmd->add_option("--out", common.out, "destination directory")->required();

  AnalyzeArgs analyze_args;
  auto *analyze_cmd = app.add_subcommand("analyze", "per-depth SSE/SSB and t-SNE embeddings");
  add_seed(analyze_cmd);
  analyze_cmd->add_option("--ckpt", common.ckpt, "checkpoint directory")->required();
  analyze_cmd->add_option("--data", common.data, "dataset")->required();
  analyze_cmd->add_option("--out", common.out, "report directory")->required();
  analyze_cmd->add_option("--depth", analyze_args.depth, "single depth to analyze (all when omitted)");
  analyze_cmd->add_option("--max-samples", analyze_args.max_samples,
                          "random subset size for the analysis (0: all)")->capture_default_str();
  analyze_cmd->add_option("--iterations", analyze_args.iterations, "t-SNE iterations")
      ->capture_default_str();

  std::size_t grad_seeds = 5;
  auto *grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full loss");
  add_config(grad_cmd);
  add_seed(grad_cmd);
  grad_cmd->add_option("--seeds", grad_seeds, "number of consecutive seeds")->capture_default_str();

  std::size_t sample_epochs = 100;
  auto *sample_cmd = app.add_subcommand("sample-check", "verify triplet partitions over many epochs");
  add_seed(sample_cmd);
  sample_cmd->add_option("--data", common.data, "dataset")->required();
  sample_cmd->add_option("--epochs", sample_epochs, "epochs to sample")->capture_default_str();

  SynthArgs synth_args;
  auto *synth_cmd = app.add_subcommand("synth", "write a synthetic dataset");
  add_seed(synth_cmd);
  synth_cmd->add_option("--out", common.out, "packed file or image directory")->required();
  synth_cmd->add_option("--kind", synth_args.kind, "gratings or blobs")->capture_default_str();
  synth_cmd->add_option("--format", synth_args.format, "packed or dir")->capture_default_str();
  synth_cmd->add_option("--classes", synth_args.spec.num_classes, "class count")->capture_default_str();
  synth_cmd->add_option("--per-class", synth_args.spec.per_class, "images per class")
      ->capture_default_str();
  synth_cmd->add_option("--size", synth_args.spec.size, "image side")->capture_default_str();
  synth_cmd->add_option("--noise", synth_args.spec.noise, "pixel noise std")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(common, train_args);
    if (*eval_cmd) return cmd_eval(common);
    if (*export_cmd) return cmd_export(common);
    if (*analyze_cmd) return cmd_analyze(common, analyze_args);
    if (*grad_cmd) return cmd_gradcheck(common, grad_seeds);
    if (*sample_cmd) return cmd_sample_check(common, sample_epochs);
    if (*synth_cmd) return cmd_synth(common, synth_args);
  } catch (const ConfigSyntaxError &e) {
    return report_error("ConfigSyntaxError", e, kConfig);
  } catch (const ConfigValidationError &e) {
    return report_error("ConfigValidationError", e, kConfig);
  } catch (const DivergenceError &e) {
    return report_error("DivergenceError", e, kDivergence);
  } catch (const SamplingInfeasibleError &e) {
    return report_error("SamplingInfeasibleError", e, kData);
  } catch (const DataError &e) {
    return report_error("DataError", e, kData);
  } catch (const InvalidImageError &e) {
    return report_error("InvalidImageError", e, kData);
  } catch (const ShapeError &e) {
    return report_error("ShapeError", e, kData);
  } catch (const DegenerateError &e) {
    return report_error("DegenerateError", e, kData);
  } catch (const IoError &e) {
    return report_error("IoError", e, kIo);
  } catch (const Error &e) {
    return report_error("error", e, kConfig);
  } catch (const std::filesystem::filesystem_error &e) {
    return report_error("filesystem", e, kIo);
  }
  return kOk;
}

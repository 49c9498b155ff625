#include "dyngraph/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dyngraph/config.hpp"
#include "dyngraph/features.hpp"
#include "dyngraph/log.hpp"
#include "dyngraph/model.hpp"
#include "dyngraph/similarity.hpp"
#include "dyngraph/training.hpp"

namespace dyngraph::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

/// Bad input data or arguments discovered after parsing; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string out;
  std::string variant;
  std::string kind = "proposed";
  std::string in;
  std::string model;
  std::string edges;
  std::size_t nodes = 0;
};

const char* const kRavdessClasses[] = {"neutral", "calm",    "happy",   "sad",
                                       "angry",   "fearful", "disgust", "surprised"};

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

RunConfig resolve_config(const Options& opt) {
  RunConfig cfg = opt.config.empty() ? RunConfig{} : load_run_config(opt.config);
  if (opt.seed) cfg.experiment.train.seed = *opt.seed;
  if (!opt.variant.empty()) {
    try {
      cfg.experiment.adjacency.variant = parse_variant(opt.variant);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--variant: ") + e.what());
    }
  }
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  cfg.validate();
  return cfg;
}

fs::path prepare_output(const RunConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_file(dir / "config.json", dump_run_config(cfg));
  return dir;
}

ojson metrics_json(double accuracy, double weighted_f1, const std::vector<double>& per_class_f1,
                   const std::vector<std::vector<std::size_t>>& confusion) {
  return ojson{{"accuracy", accuracy},
               {"weighted_f1", weighted_f1},
               {"per_class_f1", per_class_f1},
               {"confusion", confusion}};
}

// Labels for extract: labels.json ({"file": index or name}) wins over RAVDESS file names.
struct LabelSource {
  std::map<std::string, std::size_t> by_file;
  std::vector<std::string> classes;
  bool from_json = false;

  std::optional<std::size_t> lookup(const std::string& filename) const {
    if (from_json) {
      const auto it = by_file.find(filename);
      if (it == by_file.end()) return std::nullopt;
      return it->second;
    }
    return ravdess_label(filename);
  }
};

LabelSource load_labels(const fs::path& dir) {
  LabelSource src;
  const fs::path path = dir / "labels.json";
  if (!fs::exists(path)) {
    src.classes.assign(std::begin(kRavdessClasses), std::end(kRavdessClasses));
    return src;
  }
  src.from_json = true;
  std::ifstream is(path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError(path.string() + ": expected an object of file -> label");
  bool any_string = false;
  bool any_number = false;
  std::set<std::string> names;
  for (const auto& [file, value] : j.items()) {
    if (value.is_string()) {
      any_string = true;
      names.insert(value.get<std::string>());
    } else if (value.is_number_unsigned()) {
      any_number = true;
    } else {
      throw UsageError(path.string() + ": label of " + file +
                       " must be a class name or a non-negative integer");
    }
  }
  if (any_string && any_number) {
    throw UsageError(path.string() + ": mixes class names and integer labels");
  }
  src.classes.assign(names.begin(), names.end());
  for (const auto& [file, value] : j.items()) {
    if (value.is_string()) {
      const auto it = std::lower_bound(src.classes.begin(), src.classes.end(),
                                       value.get<std::string>());
      src.by_file[file] = static_cast<std::size_t>(it - src.classes.begin());
    } else {
      src.by_file[file] = value.get<std::size_t>();
    }
  }
  return src;
}

int cmd_extract(const Options& opt, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(opt);
  const fs::path in_dir = opt.in;
  if (!fs::is_directory(in_dir)) throw UsageError("--in: not a directory: " + opt.in);

  std::vector<fs::path> inputs;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".wav" || ext == ".csv") inputs.push_back(entry.path());
  }
  if (inputs.empty()) throw UsageError("no .wav or .csv files in " + in_dir.string());
  std::sort(inputs.begin(), inputs.end());

  const LabelSource labels = load_labels(in_dir);
  const fs::path out_dir = prepare_output(cfg);

  Manifest manifest;
  manifest.classes = labels.classes;
  std::vector<std::string> errors;
  std::set<std::string> written;
  for (const fs::path& path : inputs) {
    const std::string name = path.filename().string();
    try {
      const auto label = labels.lookup(name);
      if (!label) throw std::runtime_error("no label (not in labels.json or not a RAVDESS name)");
      if (!manifest.classes.empty() && *label >= manifest.classes.size()) {
        throw std::runtime_error("label " + std::to_string(*label) + " is out of range");
      }
      Matrix features;
      std::string ext = path.extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (ext == ".wav") {
        const AudioClip clip = read_wav(path);
        MfccConfig mc = cfg.mfcc;
        mc.sample_rate = clip.sample_rate;
        features = mfcc(clip, mc);
      } else {
        features = read_feature_csv(path);
      }
      if (cfg.cmvn) features = cepstral_mean_variance_normalize(features);
      if (manifest.feature_dim == 0) manifest.feature_dim = features.cols();
      if (features.cols() != manifest.feature_dim) {
        throw std::runtime_error(std::to_string(features.cols()) + " features per frame, expected " +
                                 std::to_string(manifest.feature_dim));
      }
      const std::string csv = path.stem().string() + ".csv";
      if (!written.insert(csv).second) throw std::runtime_error("output name " + csv + " is taken");
      write_feature_csv(out_dir / csv, features);
      manifest.entries.push_back({csv, *label, path.stem().string()});
      spdlog::debug("{}: {} frames x {}", name, features.rows(), features.cols());
    } catch (const std::exception& e) {
      errors.push_back(name + ": " + e.what());
      spdlog::error("{}: {}", name, e.what());
    }
  }

  write_manifest(out_dir / "manifest.json", manifest);
  out << "extracted " << manifest.entries.size() << " of " << inputs.size() << " files into "
      << out_dir.string() << "\n";
  if (manifest.entries.empty()) {
    err << "error: every input failed\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_train(const Options& opt, std::ostream& out, std::ostream&) {
  const RunConfig cfg = resolve_config(opt);
  const Dataset data = load_run_dataset(cfg);
  const fs::path dir = prepare_output(cfg);

  const TrainReport report = train(data, cfg.experiment, opt.jobs);
  const std::size_t best = report.best_fold();

  ojson folds = ojson::array();
  std::ostringstream curves;
  curves << "fold,epoch,train_loss,val_acc\n";
  for (const FoldResult& f : report.folds) {
    folds.push_back({{"fold", f.fold},
                     {"accuracy", f.validation.accuracy},
                     {"weighted_f1", f.validation.weighted_f1},
                     {"best_epoch", f.best_epoch},
                     {"epochs_run", f.epochs_run},
                     {"checksum", hex(f.checksum)}});
    for (const EpochRecord& r : f.curve)
      curves << f.fold << ',' << r.epoch << ',' << shortest(r.train_loss) << ','
             << shortest(r.val_accuracy) << '\n';
  }
  const AveragedMetrics& avg = report.average;
  ojson metrics{{"variant", to_string(cfg.experiment.adjacency.variant)},
                {"seed", cfg.experiment.train.seed},
                {"num_samples", data.samples.size()},
                {"num_classes", data.num_classes},
                {"best_fold", best},
                {"average",
                 metrics_json(avg.accuracy, avg.weighted_f1, avg.per_class_f1,
                              avg.pooled_confusion)},
                {"folds", folds}};

  write_file(dir / "metrics.json", metrics.dump(2) + "\n");
  write_file(dir / "loss_curves.csv", curves.str());
  save_model((dir / "model.bin").string(), report.folds[best].best_params);

  out << "mean accuracy " << shortest(avg.accuracy) << ", weighted F1 "
      << shortest(avg.weighted_f1) << " over " << report.folds.size() << " folds\n";
  out << "wrote metrics.json, loss_curves.csv, model.bin (fold " << best << ") to "
      << dir.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const Options& opt, std::ostream& out, std::ostream&) {
  const RunConfig cfg = resolve_config(opt);
  const ModelParams params = load_model(opt.model);
  const Dataset data = load_run_dataset(cfg);
  const ExperimentConfig& ec = cfg.experiment;

  if (params.node_count() != ec.graph.window) {
    throw UsageError("model has " + std::to_string(params.node_count()) +
                     " nodes per segment but graph.window is " + std::to_string(ec.graph.window));
  }
  if (params.feature_dim() != data.samples.front().feature_dim()) {
    throw UsageError("model expects " + std::to_string(params.feature_dim()) +
                     " features per frame, data has " +
                     std::to_string(data.samples.front().feature_dim()));
  }
  if (params.num_classes() != data.num_classes) {
    throw UsageError("model has " + std::to_string(params.num_classes()) +
                     " classes, data has " + std::to_string(data.num_classes));
  }

  const fs::path dir = prepare_output(cfg);
  const PreparedDataset prepared =
      prepare(data, ec.graph, ec.adjacency.positional_mode, ec.train.seed);
  const Trainer model(prepared, ec, params);
  std::vector<std::size_t> predictions(prepared.size());
  for (std::size_t i = 0; i < prepared.size(); ++i) predictions[i] = model.predict(i);
  const Metrics m = evaluate(predictions, prepared.labels, prepared.num_classes);

  ojson j{{"variant", to_string(ec.adjacency.variant)},
          {"num_samples", prepared.size()},
          {"num_classes", prepared.num_classes}};
  j.update(metrics_json(m.accuracy, m.weighted_f1, m.per_class_f1, m.confusion));
  write_file(dir / "evaluation.json", j.dump(2) + "\n");
  out << "accuracy " << shortest(m.accuracy) << ", weighted F1 " << shortest(m.weighted_f1)
      << " on " << prepared.size() << " samples\n";
  return kExitOk;
}

int cmd_ablate(const Options& opt, std::ostream& out, std::ostream&) {
  const RunConfig cfg = resolve_config(opt);
  const Dataset data = load_run_dataset(cfg);
  const fs::path dir = prepare_output(cfg);

  const AblationReport report = run_ablation(data, cfg.experiment, opt.jobs);

  std::ostringstream table;
  char line[128];
  std::snprintf(line, sizeof line, "%-12s %10s %12s\n", "variant", "accuracy", "weighted_f1");
  table << line;
  ojson rows = ojson::array();
  for (const AblationRow& row : report.rows) {
    std::snprintf(line, sizeof line, "%-12s %10.4f %12.4f\n",
                  std::string(to_string(row.variant)).c_str(), row.metrics.accuracy,
                  row.metrics.weighted_f1);
    table << line;
    std::vector<std::string> sums;
    for (std::uint64_t c : row.fold_checksums) sums.push_back(hex(c));
    std::string joined;
    for (const std::string& c : sums) joined += (joined.empty() ? "" : " ") + c;
    spdlog::info("{} fold checksums: {}", to_string(row.variant), joined);
    ojson r{{"variant", to_string(row.variant)}};
    r.update(metrics_json(row.metrics.accuracy, row.metrics.weighted_f1,
                          row.metrics.per_class_f1, row.metrics.pooled_confusion));
    r["fold_checksums"] = sums;
    rows.push_back(std::move(r));
  }
  std::vector<std::string> shared;
  for (const Fold& f : report.folds) shared.push_back(hex(fold_checksum(f)));
  const ojson j{{"seed", cfg.experiment.train.seed},
                {"num_samples", data.samples.size()},
                {"fold_checksums", shared},
                {"rows", rows}};

  write_file(dir / "ablation.txt", table.str());
  write_file(dir / "ablation.json", j.dump(2) + "\n");
  out << table.str();
  return kExitOk;
}

int cmd_inspect_similarity(const Options& opt, std::ostream& out, std::ostream&) {
  if (opt.nodes < 2) throw UsageError("--nodes must be at least 2");
  std::ifstream is(opt.edges);
  if (!is) throw UsageError("cannot read edge list " + opt.edges);
  SegmentGraph g;
  g.node_count = opt.nodes;
  try {
    g.edges = read_edge_list(is, opt.nodes);
  } catch (const std::invalid_argument& e) {
    throw UsageError(opt.edges + ": " + e.what());
  }
  const SimilarityMatrix s = opt.kind == "classic" ? classic_dice_matrix(g) : dice_matrix(g);
  for (std::size_t i = 0; i < s.values.rows(); ++i) {
    for (std::size_t j = 0; j < s.values.cols(); ++j) {
      if (j != 0) out << ',';
      out << shortest(s.values(i, j));
    }
    out << '\n';
  }
  return kExitOk;
}

void add_experiment_flags(CLI::App* cmd, Options& opt) {
  cmd->add_option("--config", opt.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", opt.seed, "Seed for every random stream");
  cmd->add_option("--out", opt.out, "Output directory (overrides output_dir)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  init_logging();

  CLI::App app{"Dynamic-graph sequence classification"};
  app.name("dyngraph");
  app.require_subcommand(1, 1);
  Options opt;
  const std::vector<std::string> variants = {"binary", "weighted", "learn_only", "dice_only",
                                             "full"};

  auto* extract = app.add_subcommand("extract", "MFCC/CSV features and a manifest from a directory");
  add_experiment_flags(extract, opt);
  extract->add_option("--in", opt.in, "Directory of .wav or .csv files")->required();

  auto* train_cmd = app.add_subcommand("train", "k-fold cross-validated training");
  add_experiment_flags(train_cmd, opt);
  train_cmd->add_option("--jobs", opt.jobs, "Worker threads for folds")->check(CLI::PositiveNumber);
  train_cmd->add_option("--variant", opt.variant, "Adjacency variant")
      ->check(CLI::IsMember(variants));

  auto* eval_cmd = app.add_subcommand("evaluate", "Score a saved model on a dataset");
  add_experiment_flags(eval_cmd, opt);
  eval_cmd->add_option("--model", opt.model, "model.bin written by train")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--variant", opt.variant, "Adjacency variant")
      ->check(CLI::IsMember(variants));

  auto* ablate = app.add_subcommand("ablate", "Train every adjacency variant on shared folds");
  add_experiment_flags(ablate, opt);
  ablate->add_option("--jobs", opt.jobs, "Worker threads for folds")->check(CLI::PositiveNumber);

  auto* inspect = app.add_subcommand("inspect-similarity", "Print a Dice matrix as CSV");
  inspect->add_option("--edges", opt.edges, "Edge list, one \"i j\" pair per line")->required();
  inspect->add_option("--nodes", opt.nodes, "Node count")->required();
  inspect->add_option("--kind", opt.kind, "classic or proposed")
      ->check(CLI::IsMember({"classic", "proposed"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (extract->parsed()) return cmd_extract(opt, out, err);
    if (train_cmd->parsed()) return cmd_train(opt, out, err);
    if (eval_cmd->parsed()) return cmd_evaluate(opt, out, err);
    if (ablate->parsed()) return cmd_ablate(opt, out, err);
    return cmd_inspect_similarity(opt, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace dyngraph::cli

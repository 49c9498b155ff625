#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "dyngraph/features.hpp"
#include "dyngraph/training.hpp"

namespace dyngraph {

/// Bad configuration value, unknown key or wrong JSON type. The message
/// starts with the dotted key path, e.g. "train.lambda1: expected a number".
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SyntheticConfig {
  std::size_t n_per_class = 50;
  std::size_t classes = 4;
  std::size_t frames = 40;
  std::size_t feature_dim = 8;
  double noise = 0.3;
};

struct DataConfig {
  // "manifest" or "synthetic"
  std::string source = "manifest";
  std::string manifest;
  // 0 keeps every utterance at its own length.
  std::size_t target_frames = 0;
  SyntheticConfig synthetic;
};

struct RunConfig {
  ExperimentConfig experiment;
  MfccConfig mfcc;
  bool cmvn = false;
  DataConfig data;
  std::string output_dir = "out";

  void validate() const;
};

/// Parses a JSON document. Missing keys keep their defaults; unknown keys
/// and type mismatches throw ConfigError naming the key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// The full configuration, defaults included, as indented JSON.
std::string dump_run_config(const RunConfig& cfg);

/// The dataset described by `cfg.data`, seeded by the train seed when synthetic.
Dataset load_run_dataset(const RunConfig& cfg);

}  // namespace dyngraph

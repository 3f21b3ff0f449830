#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfc/continual.hpp"
#include "hfc/data.hpp"
#include "hfc/model.hpp"

namespace hfc {

inline constexpr int kConfigVersion = 1;

/// Invalid configuration; `path()` is the dotted field path (e.g. "trainer.lr").
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct DatasetConfig {
  std::string kind = "synthetic";  ///< "synthetic" or "cifar100"
  // synthetic
  std::size_t num_classes = 10;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 20;
  std::size_t side = 16;
  std::size_t channels = 1;
  /// σ_c spread evenly from noise_min to noise_max across class ids, unless
  /// `noise` lists every class explicitly.
  double noise_min = 0.02;
  double noise_max = 0.3;
  std::vector<double> noise;
  // cifar100
  std::string train_path;
  std::string test_path;
  bool hflip = false;

  std::vector<double> noise_levels() const;
  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct StreamConfig {
  std::size_t tasks = 5;
  unsigned base_percent = 0;
  friend bool operator==(const StreamConfig&, const StreamConfig&) = default;
};

struct RunConfig {
  int version = kConfigVersion;
  std::string name = "hfc";
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  StreamConfig stream;
  ModelConfig model;
  TrainerConfig trainer;
  std::string output_dir;
};

bool equivalent(const RunConfig& a, const RunConfig& b);

/// Parses and validates a run configuration; throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Fields absent from `j` keep their values from `base`. `path` prefixes
/// field names in error messages.
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path, ModelConfig base = {});

/// Builds (or loads) the train and test sets a configuration describes.
TrainTestPair load_datasets(const RunConfig& config);

}  // namespace hfc

#pragma once

#include <optional>
#include <string>

#include "effnet/architecture.hpp"
#include "effnet/dataset.hpp"
#include "effnet/image.hpp"
#include "effnet/training.hpp"

namespace effnet::cli {

struct DatasetSection {
  std::string manifest;
  // When set, training uses `manifest` as is and validates on this file;
  // otherwise `manifest` is split per the split section.
  std::optional<std::string> val_manifest;
  NormalizeMode normalization = NormalizeMode::UnitRange;
  double gaussian_sigma = 0.0;
  std::size_t median_window = 0;
  AugmentConfig augmentation;
};

struct ModelSection {
  std::optional<std::string> preset = "chest";
  std::optional<std::string> architecture_file;
  std::optional<std::size_t> num_classes; // default: size of the label vocabulary
  std::optional<std::size_t> input_size;
  std::optional<ScalingCoefficients> scaling;
};

struct RunConfig {
  DatasetSection dataset;
  SplitSpec split;
  ModelSection model;
  TrainConfig train;
  std::string output_directory = "output";
};

// Parses a run configuration. Unknown keys and wrong types throw
// FormatError; absent sections and fields keep their defaults. Relative
// paths are resolved against `base_dir`.
RunConfig parse_run_config(const std::string& json_text, const std::string& source,
                           const std::string& base_dir);
RunConfig load_run_config(const std::string& path);

// Every field, defaults included.
std::string run_config_to_json(const RunConfig& cfg);

void validate_run_config(const RunConfig& cfg);

// Architecture described by the model section for `num_classes` labels.
ArchitectureSpec resolve_architecture(const ModelSection& model, std::size_t num_classes);

} // namespace effnet::cli

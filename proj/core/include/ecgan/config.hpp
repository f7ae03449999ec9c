#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ecgan/data.hpp"
#include "ecgan/trainer.hpp"

namespace ecgan {

/// Where the train (and test) data come from.
struct DatasetSource {
  std::string kind = "synth";  // synth | idx | dir
  int image_size = 32;         // synth render size; resize target for idx/dir
  int channels = 1;
  // synth
  int num_classes = 3;
  int n_per_class = 67;
  int test_n_per_class = 167;
  double noise_sigma = 0.35;
  std::uint64_t data_seed = 1;
  std::uint64_t test_seed = 2;
  // idx
  std::string images, labels, test_images, test_labels;
  // dir
  std::string root, labels_csv, test_root, test_labels_csv;
};

struct LoadedData {
  Dataset train;
  Dataset test;
};

/// Loads the train and test sets described by `src`.
LoadedData load_data(const DatasetSource& src);

/// Resolved experiment: every field carries its default when absent from JSON.
struct ExperimentConfig {
  DatasetSource dataset;
  Variant variant = Variant::ecgan;
  HyperParams hp;
  ModelConfig model;
  std::vector<double> dataset_percent = {100.0};
  std::vector<double> lambda_values = {0.1};  // sweep axis
  std::vector<std::uint64_t> seeds = {0};
  std::vector<Variant> sweep_variants = {Variant::baseline, Variant::ecgan, Variant::shared};
  bool augment = false;
  AugmentPolicy augment_policy;  // crop_pad / rotation_deg; enabled mirrors `augment`
  bool weight_decay_enabled = true;
  bool write_checkpoints = true;
  std::string output_dir = "ecgan_out";
};

/// Parses a JSON document. Unknown keys, wrong types and invalid values throw
/// ConfigError naming the key path (e.g. "dataset.noise").
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::string& path);
/// Canonical JSON for a resolved config; parsing it back reproduces the same JSON.
std::string config_to_json(const ExperimentConfig& cfg);

/// Applies `ECGAN_SEED` (env) and an explicit seed flag: flag > env > config.
void apply_seed_override(ExperimentConfig& cfg, std::optional<std::uint64_t> flag_seed);

}  // namespace ecgan

/**
 * Copyright 2026 The FLIP Labels Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FLIP_PIPELINE_HPP_
#define FLIP_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flip/data.hpp"
#include "flip/eval.hpp"
#include "flip/expert.hpp"
#include "flip/labelopt.hpp"
#include "flip/model.hpp"
#include "flip/select.hpp"

namespace flip {

enum class Profile { desk, paper };

std::string to_string(Profile p);
Profile profile_from_string(const std::string& s);

struct DatasetConfig {
  std::string kind = "synthetic";  ///< "synthetic" or "cifar10"
  std::string cifarDir;            ///< directory holding the CIFAR-10 binary batches
  std::size_t trainSize = 8000;    ///< 0 keeps the whole CIFAR-10 training split
  std::size_t testSize = 2000;
  int numClasses = 10;
  int side = 32;
  double noiseStd = 0.15;

  void validate() const;
};

struct SelectionConfig {
  SelectionStrategy strategy = SelectionStrategy::high;
  std::vector<std::size_t> budgets{0, 160};
};

struct ExperimentConfig {
  DatasetConfig dataset;
  TriggerSpec trigger = TriggerSpec::sinusoidal_default();
  int ySource = 9;
  int yTarget = 4;
  ModelSpec model;
  int experts = 1;
  TrainConfig expert;
  FlipOptConfig flip;
  SelectionConfig selection;
  std::vector<double> softAlphas;
  EvalConfig eval;
  /// Baselines draw their candidates from the source class only.
  bool baselinesFromSource = true;
  std::uint64_t seed = 0;
  std::string outputDir = "flip-out";

  static ExperimentConfig desk();
  static ExperimentConfig paper();
  static ExperimentConfig for_profile(Profile p);

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Keys absent from `j` keep the values already present in `c`.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Profile defaults overlaid with the keys of the file. Throws ConfigError.
ExperimentConfig load_experiment_config(const std::string& path, Profile profile);

enum class Stage { train_expert, optimize_labels, select_flips, evaluate };

std::string to_string(Stage s);

/// Hash of the canonical serialization of every config section the stage
/// (and everything upstream of it) depends on. The output directory never
/// participates.
std::uint64_t stage_hash(const ExperimentConfig& cfg, Stage stage);

/// Seed of stage `name`, instance `index`, derived from the global seed.
std::uint64_t stage_seed(const ExperimentConfig& cfg, std::string_view name, std::uint64_t index = 0);

struct RunOptions {
  bool force = false;
  int jobs = 1;
  /// Progress lines; silent when null.
  std::ostream* log = nullptr;
};

struct ExperimentData {
  LabeledDataset train;
  LabeledDataset test;
  LabeledDataset poisoned;
};

/// Materializes the datasets the experiment describes.
ExperimentData load_experiment_data(const ExperimentConfig& cfg);

std::string flipset_name(std::size_t m);
std::string soft_name(double alpha);

void run_train_expert(const ExperimentConfig& cfg, const RunOptions& opts);
void run_optimize_labels(const ExperimentConfig& cfg, const RunOptions& opts);
void run_select_flips(const ExperimentConfig& cfg, const RunOptions& opts);
void run_evaluate(const ExperimentConfig& cfg, const RunOptions& opts);
void run_stage(const ExperimentConfig& cfg, Stage stage, const RunOptions& opts);

struct ManifestEntry {
  std::string path;  ///< relative to the output directory
  std::uintmax_t size = 0;
  std::uint64_t hash = 0;
  bool operator==(const ManifestEntry&) const = default;
};

/// Every regular file under `dir` except the manifest itself, sorted by path.
std::vector<ManifestEntry> scan_manifest(const std::filesystem::path& dir);
std::string manifest_json(const std::vector<ManifestEntry>& entries);
/// Rescans `dir` and rewrites manifest.json.
void write_manifest(const std::filesystem::path& dir);

}  // namespace flip

#endif  // FLIP_PIPELINE_HPP_

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

#ifndef FLIP_EXPERT_HPP_
#define FLIP_EXPERT_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flip/data.hpp"
#include "flip/model.hpp"

namespace flip {

struct TrainConfig {
  int epochs = 20;
  int batchSize = 256;
  OptimizerHyper optimizer;
  std::vector<int> lrMilestones{75, 150};
  double lrGamma = 0.1;
  int checkpointStride = 50;  ///< iterations between recorded checkpoints
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentationConfig augmentation;
  /// Store the minibatch indices used for the step after each checkpoint.
  bool recordBatches = false;
  StorageType storage = StorageType::float32;

  void validate() const;
  std::size_t iterations_per_epoch(std::size_t datasetSize) const;
};

/// One-hot target rows for hard labels.
Matrix one_hot(std::span<const int> labels, int numClasses);

/// Normalized (and optionally augmented) input batch. Augmentation draws from
/// a per-example stream seeded by (augSeed, epoch, example index).
Tensor assemble_batch(const LabeledDataset& data, std::span<const std::size_t> indices,
                      const AugmentationConfig& cfg, bool augment = false, std::uint64_t augSeed = 0,
                      int epoch = 0);

/// Batch of the clean images carried by the given examples (poisons replaced by their sources).
Tensor assemble_clean_batch(const LabeledDataset& data, std::span<const std::size_t> indices,
                            const AugmentationConfig& cfg);

/// Called with (k, theta_k, batch used for step k); the final call has an empty batch.
using StepObserver =
    std::function<void(std::int64_t step, const ParamVector& params, std::span<const std::size_t> batch)>;

/// Shuffled minibatch training against soft or one-hot targets.
ParamVector train_model(const Network& net, const LabeledDataset& data, const Matrix& targets,
                        const TrainConfig& cfg, ParamVector init, const StepObserver& observer = {});

struct Checkpoint {
  std::int64_t globalStep = 0;
  ParamVector params;
  std::vector<std::uint32_t> batch;  ///< empty unless recordBatches
};

struct ExpertTrajectory {
  std::vector<Checkpoint> checkpoints;
  TrainConfig config;
  ModelSpec spec;
  std::uint64_t datasetFingerprint = 0;
  /// Hash of the experiment config that produced this file, 0 when unused.
  std::uint64_t configHash = 0;
};

ExpertTrajectory train_expert(const LabeledDataset& poisoned, const ModelSpec& spec, const TrainConfig& cfg);

/// E experts with seeds derived from cfg.seed and the expert index.
std::vector<ExpertTrajectory> train_experts(const LabeledDataset& poisoned, const ModelSpec& spec,
                                            const TrainConfig& baseCfg, int count, int jobs = 1);

std::uint64_t expert_seed(std::uint64_t baseSeed, int index);

std::string serialize_trajectory(const ExpertTrajectory& traj);
void save_trajectory(const ExpertTrajectory& traj, const std::string& path);

struct TrajectoryLoadOptions {
  const ModelSpec* expectedSpec = nullptr;
  std::optional<std::uint64_t> expectedFingerprint;
};

struct LoadedTrajectory {
  ExpertTrajectory trajectory;
  std::vector<std::string> warnings;
};

LoadedTrajectory parse_trajectory(std::span<const char> bytes, const TrajectoryLoadOptions& opts = {});
LoadedTrajectory load_trajectory(const std::string& path, const TrajectoryLoadOptions& opts = {});

/// Config hash from the metadata block only; the checkpoints are not read.
std::uint64_t peek_trajectory_config_hash(const std::string& path);

}  // namespace flip

#endif  // FLIP_EXPERT_HPP_

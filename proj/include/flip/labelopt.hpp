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

#ifndef FLIP_LABELOPT_HPP_
#define FLIP_LABELOPT_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flip/expert.hpp"
#include "flip/model.hpp"

namespace flip {

/// Real-valued logits, one row per clean training example. softmax(row) is the soft label.
struct LogitTable {
  Matrix logits;

  std::size_t rows() const { return static_cast<std::size_t>(logits.rows()); }
  int num_classes() const { return static_cast<int>(logits.cols()); }
  bool operator==(const LogitTable& o) const {
    return logits.rows() == o.logits.rows() && logits.cols() == o.logits.cols() && logits == o.logits;
  }
};

struct FlipOptConfig {
  int passes = 25;             ///< sweeps over the poisoned dataset
  double studentLr = 0.01;     ///< step size of the paired inner steps
  double labelLr = 1.0;        ///< step size on the logit table
  double temperature = 8.0;    ///< logit scale of the one-hot initialization
  double l1Weight = 0.0;       ///< weight of the sparse-deviation penalty
  int batchSize = 256;
  int runs = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

LogitTable init_logits(std::span<const int> labels, int numClasses, double temperature);

/// A minibatch of the poisoned dataset together with its clean projection.
struct PairedBatch {
  Tensor poisoned;            ///< images as the expert saw them
  Matrix poisonedTargets;     ///< one-hot labels of the poisoned dataset
  Tensor clean;               ///< poisons replaced by their clean source images
  std::vector<std::size_t> rows;  ///< logit-table row carried by each entry
  std::vector<int> trueLabels;    ///< ground-truth label of each clean image
  /// Clean originals of poisoned images train on their one-hot true label and
  /// send no gradient to their row; only the poison twin moves it. Empty means none.
  std::vector<bool> fixedTarget;

  int size() const { return poisoned.n; }
  bool is_fixed(std::size_t k) const { return k < fixedTarget.size() && fixedTarget[k]; }
};

PairedBatch make_paired_batch(const LabeledDataset& poisoned, std::span<const std::size_t> indices,
                              const AugmentationConfig& normalization);

/// Soft targets softmax(logits[row]) for every batch entry.
Matrix soft_targets(const LogitTable& table, std::span<const std::size_t> rows);

/// Student targets: soft targets, with one-hot true labels on fixed entries.
Matrix student_targets(const LogitTable& table, const PairedBatch& batch);

/// Sorted, unique rows of the entries that are not fixed.
std::vector<std::size_t> updated_rows(const PairedBatch& batch);

struct PairedSteps {
  ParamVector expertNext;   ///< step on the poisoned batch
  ParamVector studentNext;  ///< step on the clean batch with soft labels
};

PairedSteps paired_steps(const Network& net, const ParamVector& theta, const PairedBatch& batch,
                         const Matrix& softTargets, double studentLr);

/// ||expertNext - studentNext||^2 / ||expertNext - theta||^2.
/// Throws DegenerateStepError when the denominator norm is below kDegenerateStepNorm.
double l_param(const ParamVector& theta, const ParamVector& expertNext, const ParamVector& studentNext);

inline constexpr double kDegenerateStepNorm = 1e-12;

/// ||onehot(label) - softmax(row)||_1, in [0, 2].
double l1_penalty(std::span<const double> row, int label);

/// Batch-mean l1 penalty times `weight`.
double l1_term(const LogitTable& table, const PairedBatch& batch, double weight);

/// Gradient with respect to the logit rows touched by a batch. Rows appearing
/// more than once receive the sum of their contributions.
struct RowGradients {
  std::vector<std::size_t> rows;  ///< sorted, unique
  Matrix grads;                   ///< one row per entry of `rows`
  double lParam = 0.0;
  double penalty = 0.0;

  /// Dense table-shaped gradient (zero outside `rows`).
  Matrix scatter(std::size_t tableRows, int numClasses) const;
};

/// Closed-form gradient of l_param + l1 term. Uses one forward-mode product of
/// the student residual through the logits of the clean batch.
RowGradients label_gradient(const Network& net, const ParamVector& theta, const PairedBatch& batch,
                            const LogitTable& table, double studentLr, double l1Weight);

/// Same contract computed from explicit per-class parameter gradients.
RowGradients label_gradient_reference(const Network& net, const ParamVector& theta, const PairedBatch& batch,
                                      const LogitTable& table, double studentLr, double l1Weight);

struct FlipRunResult {
  LogitTable logits;
  std::vector<double> passMeanLParam;
  std::size_t skippedSteps = 0;
  std::size_t steps = 0;
};

/// One run of the trajectory-matching label optimization.
FlipRunResult run_flip(const std::vector<ExpertTrajectory>& trajectories, const LabeledDataset& poisoned,
                       const FlipOptConfig& cfg);

/// cfg.runs independent runs with seeds derived from cfg.seed.
std::vector<FlipRunResult> run_flip_runs(const std::vector<ExpertTrajectory>& trajectories,
                                         const LabeledDataset& poisoned, const FlipOptConfig& cfg, int jobs = 1);

std::uint64_t run_seed(std::uint64_t baseSeed, int run);

// Logit-table files ---------------------------------------------------------------

struct LogitFileHeader {
  std::uint64_t configHash = 0;
  std::uint64_t seed = 0;
};

std::string serialize_logits(const LogitTable& table, const LogitFileHeader& header);
LogitTable parse_logits(std::span<const char> bytes, LogitFileHeader* header = nullptr);
void save_logits(const LogitTable& table, const LogitFileHeader& header, const std::string& path);
LogitTable load_logits(const std::string& path, LogitFileHeader* header = nullptr);

}  // namespace flip

#endif  // FLIP_LABELOPT_HPP_

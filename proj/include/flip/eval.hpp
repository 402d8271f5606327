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

#ifndef FLIP_EVAL_HPP_
#define FLIP_EVAL_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "flip/data.hpp"
#include "flip/expert.hpp"
#include "flip/model.hpp"
#include "flip/select.hpp"

namespace flip {

enum class PtaSubset { source_class, all_but_target };

std::string to_string(PtaSubset s);
PtaSubset pta_subset_from_string(const std::string& s);

struct EvalConfig {
  int repeats = 3;
  TrainConfig train;
  PtaSubset ptaSubset = PtaSubset::source_class;

  void validate() const;
};

/// Hard labels or a soft-label table for the clean training images.
using LabelAssignment = std::variant<std::vector<int>, SoftLabelTable>;

ParamVector train_user(const LabeledDataset& clean, const LabelAssignment& labels, const ModelSpec& spec,
                       const TrainConfig& cfg);

/// Argmax predictions; ties resolve to the lowest class index.
std::vector<int> predict(const Network& net, const ParamVector& params, const LabeledDataset& data,
                         const AugmentationConfig& norm);

/// Clean test accuracy in percent.
double cta(const Network& net, const ParamVector& params, const LabeledDataset& test, const AugmentationConfig& norm);

/// Test examples used for the poison accuracy.
std::vector<std::size_t> pta_subset(const LabeledDataset& test, PtaSubset rule, int ySource, int yTarget);

/// Percentage of triggered subset images classified as yTarget.
double pta(const Network& net, const ParamVector& params, const LabeledDataset& test, const TriggerSpec& trigger,
           PtaSubset rule, int ySource, int yTarget, const AugmentationConfig& norm);

/// T(gray) - gray for a mid-gray image, flattened.
std::vector<double> trigger_pattern(const TriggerSpec& trigger, const ImageShape& shape);

/// Flips the m candidates with the largest inner product against the trigger pattern.
FlipSet baseline_inner_product(const LabeledDataset& clean, const TriggerSpec& trigger, std::size_t m,
                               bool restrictToSource, int ySource, int yTarget);

/// Flips a uniform m-subset of candidates to yTarget.
FlipSet baseline_random(const LabeledDataset& clean, std::size_t m, std::uint64_t seed, bool restrictToSource,
                        int ySource, int yTarget);

struct EvalRow {
  double point = 0.0;
  double ctaMean = 0.0;
  double ctaStderr = 0.0;
  double ptaMean = 0.0;
  double ptaStderr = 0.0;
  int repeats = 0;
  std::uint64_t seed0 = 0;
};

struct EvalResult {
  std::vector<EvalRow> rows;
};

struct EvalPoint {
  double value = 0.0;  ///< budget m or interpolation weight alpha
  LabelAssignment labels;
};

/// Mean and unbiased standard error; zero error for a single sample.
std::pair<double, double> mean_stderr(const std::vector<double>& xs);

/// Seed of user model `repeat`; shared by every point so curves are paired.
std::uint64_t user_seed(std::uint64_t baseSeed, int repeat);

EvalResult tradeoff_curve(const std::vector<EvalPoint>& points, const LabeledDataset& cleanTrain,
                          const LabeledDataset& test, const ModelSpec& spec, const EvalConfig& cfg,
                          const TriggerSpec& trigger, int ySource, int yTarget, std::uint64_t baseSeed, int jobs = 1);

std::string eval_csv(const EvalResult& result);

/// CTA against PTA with error bars, one series per method.
std::string tradeoff_svg(const std::vector<std::pair<std::string, EvalResult>>& series);

}  // namespace flip

#endif  // FLIP_EVAL_HPP_

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

#ifndef FLIP_VERIFY_HPP_
#define FLIP_VERIFY_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flip/labelopt.hpp"

namespace flip::verify {

/// Matching loss plus l1 term evaluated from scratch for a given table.
double matching_objective(const Network& net, const ParamVector& theta, const PairedBatch& batch,
                          const LogitTable& table, double studentLr, double l1Weight);

/// Central differences of the matching objective over every logit of every row
/// in the batch, fixed entries included.
RowGradients fd_label_gradient(const Network& net, const ParamVector& theta, const PairedBatch& batch,
                               const LogitTable& table, double studentLr, double l1Weight, double eps);

/// Full sort by descending score (ties to the lower index), then the first m indices.
std::vector<std::size_t> brute_select(std::span<const double> scores, std::size_t m);

/// Two-class linear model z = W x + b with a single-example batch.
struct LogisticInstance {
  std::vector<double> weights;  ///< 2 x d, row-major
  std::array<double, 2> bias{};
  std::vector<double> poisonInput;
  int poisonLabel = 0;
  std::vector<double> cleanInput;
  std::array<double, 2> logits{};  ///< logit-table row of the clean example
};

/// Hand-derived gradient of the matching loss with respect to the two logits.
std::array<double, 2> logistic_label_gradient(const LogisticInstance& inst);

/// ||a - b|| / max(||a||, ||b||, floor).
double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-300);

struct OracleReport {
  std::string name;
  bool passed = false;
  double worst = 0.0;      ///< worst observed error
  double tolerance = 0.0;
  std::string detail;
};

/// Gradient, selection and logistic oracles on randomized tiny instances.
std::vector<OracleReport> run_oracle_suite(std::uint64_t seed, int instances = 20);

/// Random tiny-mlp (2 -> hidden -> classes) paired batch with poisons, fixed
/// entries and repeated rows.
struct TinyInstance {
  Network net;
  ParamVector theta;
  PairedBatch batch;
  LogitTable table;
};

TinyInstance make_tiny_instance(std::uint64_t seed, int hidden = 16, int classes = 3, int batchSize = 8,
                                std::size_t tableRows = 12);

}  // namespace flip::verify

#endif  // FLIP_VERIFY_HPP_

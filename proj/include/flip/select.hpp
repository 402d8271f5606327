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

#ifndef FLIP_SELECT_HPP_
#define FLIP_SELECT_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flip/labelopt.hpp"

namespace flip {

struct ScoreEntry {
  double score = 0.0;     ///< best incorrect logit minus the true-class logit
  int proposedLabel = 0;  ///< the incorrect class achieving it
};

using ScoreTable = std::vector<ScoreEntry>;

/// Incorrect-class ties resolve to the lowest class index.
ScoreTable score_table(const LogitTable& table, std::span<const int> labels);

/// Minimum score over runs; proposed label from the run-averaged softmax.
ScoreTable aggregate_runs(std::span<const LogitTable> runs, std::span<const int> labels);

enum class SelectionStrategy { high, random, low };

std::string to_string(SelectionStrategy s);
SelectionStrategy selection_from_string(const std::string& s);

struct FlipEntry {
  std::size_t index = 0;
  int newLabel = 0;
  bool operator==(const FlipEntry&) const = default;
};

struct FlipSet {
  std::vector<FlipEntry> entries;
  std::size_t budget = 0;

  std::size_t size() const { return entries.size(); }
};

/// high: top-m by score; low: bottom-m; random: uniform m-subset. Score ties
/// resolve to the lower index; m is clamped to the table size.
FlipSet select_flips(const ScoreTable& scores, std::size_t m, SelectionStrategy strategy, std::uint64_t seed = 0);

/// Throws ConfigError on duplicate or out-of-range indices.
std::vector<int> apply_flips(std::span<const int> labels, const FlipSet& flips);

/// Rows are nonnegative and sum to one.
struct SoftLabelTable {
  Matrix rows;
};

/// alpha * onehot(y) + (1 - alpha) * mean over runs of softmax(logits).
SoftLabelTable soft_flip(std::span<const LogitTable> runs, std::span<const int> trueLabels, double alpha);

/// Per-row argmax; ties resolve to the lowest class index.
std::vector<int> discretize_soft(const SoftLabelTable& soft);

// FlipSet files ------------------------------------------------------------------

std::string serialize_flipset(const FlipSet& flips, std::uint64_t configHash);
FlipSet parse_flipset(const std::string& text, std::uint64_t* configHash = nullptr);
void save_flipset(const FlipSet& flips, std::uint64_t configHash, const std::string& path);
FlipSet load_flipset(const std::string& path, std::uint64_t* configHash = nullptr);

}  // namespace flip

#endif  // FLIP_SELECT_HPP_

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

#include "flip/select.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace flip {

namespace {

ScoreEntry score_row(const Eigen::Ref<const Eigen::RowVectorXd>& row, int label) {
  ScoreEntry e;
  e.proposedLabel = -1;
  double best = 0.0;
  for (Eigen::Index c = 0; c < row.size(); ++c) {
    if (c == label) continue;
    if (e.proposedLabel < 0 || row[c] > best) {
      best = row[c];
      e.proposedLabel = static_cast<int>(c);
    }
  }
  e.score = best - row[label];
  return e;
}

void check_labels(std::size_t rows, int k, std::span<const int> labels) {
  if (k < 2) throw ConfigError("scoring needs at least two classes");
  if (labels.size() != rows) throw ConfigError("label count does not match logit rows");
  for (int y : labels) {
    if (y < 0 || y >= k) throw ConfigError("label outside class range");
  }
}

}  // namespace

ScoreTable score_table(const LogitTable& table, std::span<const int> labels) {
  check_labels(table.rows(), table.num_classes(), labels);
  ScoreTable out(table.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = score_row(table.logits.row(static_cast<Eigen::Index>(i)), labels[i]);
  }
  return out;
}

ScoreTable aggregate_runs(std::span<const LogitTable> runs, std::span<const int> labels) {
  if (runs.empty()) throw ConfigError("aggregation needs at least one run");
  const std::size_t n = runs.front().rows();
  const int k = runs.front().num_classes();
  for (const auto& r : runs) {
    if (r.rows() != n || r.num_classes() != k) throw ConfigError("runs have inconsistent shapes");
  }
  check_labels(n, k, labels);

  ScoreTable out(n);
  Matrix meanSoft = Matrix::Zero(static_cast<Eigen::Index>(n), k);
  std::vector<double> minScore(n, std::numeric_limits<double>::infinity());
  for (const auto& r : runs) {
    const ScoreTable s = score_table(r, labels);
    for (std::size_t i = 0; i < n; ++i) minScore[i] = std::min(minScore[i], s[i].score);
    meanSoft += softmax_rows(r.logits);
  }
  meanSoft /= static_cast<double>(runs.size());
  for (std::size_t i = 0; i < n; ++i) {
    out[i].score = minScore[i];
    out[i].proposedLabel = score_row(meanSoft.row(static_cast<Eigen::Index>(i)), labels[i]).proposedLabel;
  }
  return out;
}

std::string to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::high: return "high";
    case SelectionStrategy::random: return "random";
    case SelectionStrategy::low: return "low";
  }
  return "high";
}

SelectionStrategy selection_from_string(const std::string& s) {
  if (s == "high") return SelectionStrategy::high;
  if (s == "random") return SelectionStrategy::random;
  if (s == "low") return SelectionStrategy::low;
  throw ConfigError("unknown selection strategy '" + s + "'");
}

FlipSet select_flips(const ScoreTable& scores, std::size_t m, SelectionStrategy strategy, std::uint64_t seed) {
  const std::size_t take = std::min(m, scores.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  switch (strategy) {
    case SelectionStrategy::high:
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                        [&](std::size_t a, std::size_t b) {
                          return scores[a].score != scores[b].score ? scores[a].score > scores[b].score : a < b;
                        });
      break;
    case SelectionStrategy::low:
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                        [&](std::size_t a, std::size_t b) {
                          return scores[a].score != scores[b].score ? scores[a].score < scores[b].score : a < b;
                        });
      break;
    case SelectionStrategy::random: {
      std::mt19937_64 rng(seed);
      std::shuffle(order.begin(), order.end(), rng);
      std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
      break;
    }
  }
  FlipSet out;
  out.budget = m;
  out.entries.reserve(take);
  for (std::size_t k = 0; k < take; ++k) out.entries.push_back({order[k], scores[order[k]].proposedLabel});
  return out;
}

std::vector<int> apply_flips(std::span<const int> labels, const FlipSet& flips) {
  std::vector<int> out(labels.begin(), labels.end());
  std::unordered_set<std::size_t> seen;
  for (const auto& e : flips.entries) {
    if (e.index >= labels.size()) throw ConfigError("flip index " + std::to_string(e.index) + " out of range");
    if (!seen.insert(e.index).second) throw ConfigError("duplicate flip index " + std::to_string(e.index));
    if (e.newLabel == labels[e.index]) throw ConfigError("flip at index " + std::to_string(e.index) + " keeps its label");
    out[e.index] = e.newLabel;
  }
  return out;
}

SoftLabelTable soft_flip(std::span<const LogitTable> runs, std::span<const int> trueLabels, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (runs.empty()) throw ConfigError("softFLIP needs at least one run");
  const std::size_t n = runs.front().rows();
  const int k = runs.front().num_classes();
  Matrix mean = Matrix::Zero(static_cast<Eigen::Index>(n), k);
  for (const auto& r : runs) {
    if (r.rows() != n || r.num_classes() != k) throw ConfigError("runs have inconsistent shapes");
    mean += softmax_rows(r.logits);
  }
  mean /= static_cast<double>(runs.size());
  SoftLabelTable out;
  out.rows = alpha * one_hot(trueLabels, k) + (1.0 - alpha) * mean;
  return out;
}

std::vector<int> discretize_soft(const SoftLabelTable& soft) {
  std::vector<int> out(static_cast<std::size_t>(soft.rows.rows()));
  for (Eigen::Index i = 0; i < soft.rows.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < soft.rows.cols(); ++c) {
      if (soft.rows(i, c) > soft.rows(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// Files ----------------------------------------------------------------------------

std::string serialize_flipset(const FlipSet& flips, std::uint64_t configHash) {
  std::ostringstream os;
  os << "# flipset config_hash=" << hex64(configHash) << " m=" << flips.budget << "\n";
  os << "# index,newLabel\n";
  for (const auto& e : flips.entries) os << e.index << ',' << e.newLabel << '\n';
  return os.str();
}

FlipSet parse_flipset(const std::string& text, std::uint64_t* configHash) {
  std::istringstream is(text);
  std::string line;
  FlipSet out;
  bool sawHeader = false;
  std::size_t lineNo = 0;
  while (std::getline(is, line)) {
    ++lineNo;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto h = line.find("config_hash=");
      const auto m = line.find(" m=");
      if (h != std::string::npos && m != std::string::npos) {
        if (configHash != nullptr) *configHash = parse_hex64(line.substr(h + 12, m - h - 12));
        out.budget = std::stoull(line.substr(m + 3));
        sawHeader = true;
      }
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("flipset line " + std::to_string(lineNo) + ": expected index,newLabel");
    try {
      out.entries.push_back({std::stoull(line.substr(0, comma)), std::stoi(line.substr(comma + 1))});
    } catch (const std::exception&) {
      throw ParseError("flipset line " + std::to_string(lineNo) + ": expected index,newLabel");
    }
  }
  if (!sawHeader) throw ParseError("flipset is missing its header line");
  return out;
}

void save_flipset(const FlipSet& flips, std::uint64_t configHash, const std::string& path) {
  write_file_atomic(path, serialize_flipset(flips, configHash));
}

FlipSet load_flipset(const std::string& path, std::uint64_t* configHash) {
  const auto bytes = read_file(path);
  return parse_flipset(std::string(bytes.begin(), bytes.end()), configHash);
}

}  // namespace flip

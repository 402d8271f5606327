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

#include "flip/labelopt.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace flip {

void FlipOptConfig::validate() const {
  if (passes < 1) throw ConfigError("passes must be >= 1");
  if (!(studentLr > 0.0)) throw ConfigError("student step size must be > 0");
  if (!(labelLr >= 0.0)) throw ConfigError("label step size must be >= 0");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(l1Weight >= 0.0)) throw ConfigError("l1 weight must be >= 0");
  if (batchSize < 1) throw ConfigError("batch size must be >= 1");
  if (runs < 1) throw ConfigError("runs must be >= 1");
}

LogitTable init_logits(std::span<const int> labels, int numClasses, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  LogitTable t;
  t.logits = one_hot(labels, numClasses) * temperature;
  return t;
}

PairedBatch make_paired_batch(const LabeledDataset& poisoned, std::span<const std::size_t> indices,
                              const AugmentationConfig& normalization) {
  PairedBatch b;
  b.poisoned = assemble_batch(poisoned, indices, normalization);
  b.clean = assemble_clean_batch(poisoned, indices, normalization);
  std::vector<bool> hasTwin(poisoned.size(), false);
  for (std::size_t i = 0; i < poisoned.size(); ++i) {
    if (poisoned.provenance(i).isPoison) hasTwin[poisoned.clean_index(i)] = true;
  }
  std::vector<int> labels(indices.size());
  b.rows.resize(indices.size());
  b.trueLabels.resize(indices.size());
  b.fixedTarget.resize(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    labels[k] = poisoned.label(indices[k]);
    b.rows[k] = poisoned.clean_index(indices[k]);
    b.trueLabels[k] = poisoned.label(b.rows[k]);
    b.fixedTarget[k] = !poisoned.provenance(indices[k]).isPoison && hasTwin[indices[k]];
  }
  b.poisonedTargets = one_hot(labels, poisoned.num_classes());
  return b;
}

Matrix soft_targets(const LogitTable& table, std::span<const std::size_t> rows) {
  Matrix sel(static_cast<Eigen::Index>(rows.size()), table.logits.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= table.rows()) throw ConfigError("batch row outside logit table");
    sel.row(static_cast<Eigen::Index>(k)) = table.logits.row(static_cast<Eigen::Index>(rows[k]));
  }
  return softmax_rows(sel);
}

Matrix student_targets(const LogitTable& table, const PairedBatch& batch) {
  Matrix t = soft_targets(table, batch.rows);
  for (std::size_t k = 0; k < batch.rows.size(); ++k) {
    if (!batch.is_fixed(k)) continue;
    t.row(static_cast<Eigen::Index>(k)).setZero();
    t(static_cast<Eigen::Index>(k), batch.trueLabels[k]) = 1.0;
  }
  return t;
}

std::vector<std::size_t> updated_rows(const PairedBatch& batch) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < batch.rows.size(); ++k) {
    if (!batch.is_fixed(k)) out.push_back(batch.rows[k]);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

PairedSteps paired_steps(const Network& net, const ParamVector& theta, const PairedBatch& batch,
                         const Matrix& softTargets, double studentLr) {
  if (batch.poisoned.n != batch.clean.n || softTargets.rows() != batch.clean.n ||
      batch.poisonedTargets.rows() != batch.poisoned.n) {
    throw ConfigError("poisoned and clean batches differ in size");
  }
  const LossAndGrad gp = net.ce_loss_and_grad(theta, batch.poisoned, batch.poisonedTargets);
  const LossAndGrad gc = net.ce_loss_and_grad(theta, batch.clean, softTargets);
  PairedSteps out;
  out.expertNext = ParamVector(theta.values - studentLr * gp.grad.values);
  out.studentNext = ParamVector(theta.values - studentLr * gc.grad.values);
  return out;
}

double l_param(const ParamVector& theta, const ParamVector& expertNext, const ParamVector& studentNext) {
  if (theta.size() != expertNext.size() || theta.size() != studentNext.size()) {
    throw ConfigError("parameter vectors differ in length");
  }
  const double denom = (expertNext.values - theta.values).squaredNorm();
  if (!(std::sqrt(denom) >= kDegenerateStepNorm)) {
    throw DegenerateStepError("expert step norm below 1e-12; matching loss undefined");
  }
  return (expertNext.values - studentNext.values).squaredNorm() / denom;
}

double l1_penalty(std::span<const double> row, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= row.size()) throw ConfigError("label outside row");
  const Eigen::VectorXd p = softmax(Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(row.size())));
  double s = 0.0;
  for (Eigen::Index c = 0; c < p.size(); ++c) s += std::abs((c == label ? 1.0 : 0.0) - p[c]);
  return s;
}

double l1_term(const LogitTable& table, const PairedBatch& batch, double weight) {
  if (weight == 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k < batch.rows.size(); ++k) {
    if (batch.is_fixed(k)) continue;
    const auto r = static_cast<Eigen::Index>(batch.rows[k]);
    const Eigen::VectorXd row = table.logits.row(r).transpose();
    s += l1_penalty({row.data(), static_cast<std::size_t>(row.size())}, batch.trueLabels[k]);
  }
  return weight * s / static_cast<double>(batch.rows.size());
}

Matrix RowGradients::scatter(std::size_t tableRows, int numClasses) const {
  Matrix full = Matrix::Zero(static_cast<Eigen::Index>(tableRows), numClasses);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    full.row(static_cast<Eigen::Index>(rows[k])) = grads.row(static_cast<Eigen::Index>(k));
  }
  return full;
}

namespace {

/// Turns gradients with respect to each entry's soft label into gradients with
/// respect to its logit row, adds the l1 subgradient, and merges duplicate rows.
/// Fixed entries contribute nothing.
RowGradients finish_gradient(const PairedBatch& batch, const Matrix& softLabels, Matrix dSoft, double l1Weight,
                             double lParam, double penalty) {
  const Eigen::Index k = softLabels.cols();
  const double invB = 1.0 / static_cast<double>(batch.rows.size());
  if (l1Weight != 0.0) {
    for (Eigen::Index j = 0; j < dSoft.rows(); ++j) {
      if (batch.is_fixed(static_cast<std::size_t>(j))) continue;
      const int y = batch.trueLabels[static_cast<std::size_t>(j)];
      for (Eigen::Index c = 0; c < k; ++c) {
        const double diff = softLabels(j, c) - (c == y ? 1.0 : 0.0);
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        dSoft(j, c) += l1Weight * invB * sign;
      }
    }
  }
  RowGradients out;
  out.rows = updated_rows(batch);
  std::map<std::size_t, Eigen::Index> slot;
  for (std::size_t i = 0; i < out.rows.size(); ++i) slot.emplace(out.rows[i], static_cast<Eigen::Index>(i));
  out.grads = Matrix::Zero(static_cast<Eigen::Index>(out.rows.size()), k);
  for (Eigen::Index j = 0; j < dSoft.rows(); ++j) {
    if (batch.is_fixed(static_cast<std::size_t>(j))) continue;
    const auto p = softLabels.row(j);
    const double inner = p.dot(dSoft.row(j));
    out.grads.row(slot.at(batch.rows[static_cast<std::size_t>(j)])) += (p.array() * (dSoft.row(j).array() - inner)).matrix();
  }
  out.lParam = lParam;
  out.penalty = penalty;
  return out;
}

struct StepGeometry {
  Eigen::VectorXd residual;  // studentNext - expertNext
  double stepNorm2 = 0.0;    // ||expertNext - theta||^2
  double lParam = 0.0;
};

StepGeometry step_geometry(const Network& net, const ParamVector& theta, const PairedBatch& batch,
                           const Matrix& softLabels, double studentLr) {
  const PairedSteps steps = paired_steps(net, theta, batch, softLabels, studentLr);
  StepGeometry g;
  g.lParam = l_param(theta, steps.expertNext, steps.studentNext);
  g.residual = steps.studentNext.values - steps.expertNext.values;
  g.stepNorm2 = (steps.expertNext.values - theta.values).squaredNorm();
  return g;
}

}  // namespace

RowGradients label_gradient(const Network& net, const ParamVector& theta, const PairedBatch& batch,
                            const LogitTable& table, double studentLr, double l1Weight) {
  const Matrix soft = student_targets(table, batch);
  const StepGeometry geo = step_geometry(net, theta, batch, soft, studentLr);
  // r^T grad_c(x_j) = (J_j r) . (p_j - e_c) with p_j the model's softmax on x_j.
  const Matrix v = net.logits_jvp(theta, batch.clean, ParamVector(geo.residual));
  const Matrix probs = softmax_rows(net.forward(theta, batch.clean));
  const double scale = -2.0 * studentLr / (static_cast<double>(batch.size()) * geo.stepNorm2);
  Matrix dSoft(v.rows(), v.cols());
  for (Eigen::Index j = 0; j < v.rows(); ++j) {
    const double vp = v.row(j).dot(probs.row(j));
    dSoft.row(j) = scale * (vp - v.row(j).array()).matrix();
  }
  return finish_gradient(batch, soft, std::move(dSoft), l1Weight, geo.lParam, l1_term(table, batch, l1Weight));
}

RowGradients label_gradient_reference(const Network& net, const ParamVector& theta, const PairedBatch& batch,
                                      const LogitTable& table, double studentLr, double l1Weight) {
  const Matrix soft = student_targets(table, batch);
  const StepGeometry geo = step_geometry(net, theta, batch, soft, studentLr);
  const double scale = -2.0 * studentLr / (static_cast<double>(batch.size()) * geo.stepNorm2);
  const int k = net.spec().numClasses;
  Matrix dSoft(batch.size(), k);
  for (int j = 0; j < batch.size(); ++j) {
    Tensor one(1, batch.clean.shape);
    std::copy_n(batch.clean.example(j), batch.clean.per_example(), one.data.data());
    const auto grads = net.per_class_nll_grads(theta, one);
    for (int c = 0; c < k; ++c) dSoft(j, c) = scale * geo.residual.dot(grads[static_cast<std::size_t>(c)].values);
  }
  return finish_gradient(batch, soft, std::move(dSoft), l1Weight, geo.lParam, l1_term(table, batch, l1Weight));
}

// Optimization loop ------------------------------------------------------------------------

std::uint64_t run_seed(std::uint64_t baseSeed, int run) {
  return derive_seed(baseSeed, "flip-run", static_cast<std::uint64_t>(run));
}

FlipRunResult run_flip(const std::vector<ExpertTrajectory>& trajectories, const LabeledDataset& poisoned,
                       const FlipOptConfig& cfg) {
  cfg.validate();
  if (trajectories.empty()) throw ConfigError("run_flip needs at least one expert trajectory");
  const ExpertTrajectory& first = trajectories.front();
  for (const auto& t : trajectories) {
    if (!(t.spec == first.spec)) throw ConfigError("expert trajectories disagree on model spec");
    if (t.datasetFingerprint != first.datasetFingerprint) {
      throw ConfigError("expert trajectories disagree on dataset fingerprint");
    }
    if (t.checkpoints.empty()) throw ConfigError("expert trajectory has no checkpoints");
  }
  if (first.datasetFingerprint != poisoned.fingerprint()) {
    throw ConfigError("expert trajectories were trained on a different poisoned dataset (fingerprint " +
                      hex64(first.datasetFingerprint) + " vs " + hex64(poisoned.fingerprint()) + ")");
  }
  std::size_t cleanCount = 0;
  while (cleanCount < poisoned.size() && !poisoned.provenance(cleanCount).isPoison) ++cleanCount;
  for (std::size_t i = cleanCount; i < poisoned.size(); ++i) {
    if (!poisoned.provenance(i).isPoison) throw ConfigError("clean examples must precede poisons");
  }

  const Network net(first.spec);
  const AugmentationConfig& norm = first.config.augmentation;
  const bool replay = first.config.recordBatches;
  std::vector<int> cleanLabels(poisoned.labels().begin(), poisoned.labels().begin() + static_cast<std::ptrdiff_t>(cleanCount));

  FlipRunResult result;
  result.logits = init_logits(cleanLabels, poisoned.num_classes(), cfg.temperature);
  std::mt19937_64 sampler(derive_seed(cfg.seed, "checkpoint-sampler", 0));
  std::uniform_int_distribution<std::size_t> pickExpert(0, trajectories.size() - 1);

  std::vector<std::size_t> order(poisoned.size());
  const auto b = static_cast<std::size_t>(cfg.batchSize);
  for (int pass = 0; pass < cfg.passes; ++pass) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffleRng(derive_seed(cfg.seed, "pass", static_cast<std::uint64_t>(pass)));
    std::shuffle(order.begin(), order.end(), shuffleRng);
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < order.size(); start += b) {
      const ExpertTrajectory& traj = trajectories[pickExpert(sampler)];
      std::uniform_int_distribution<std::size_t> pickCheckpoint(0, traj.checkpoints.size() - 1);
      const Checkpoint& cp = traj.checkpoints[pickCheckpoint(sampler)];

      std::vector<std::size_t> indices;
      if (replay && !cp.batch.empty()) {
        indices.assign(cp.batch.begin(), cp.batch.end());
      } else {
        indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + b)));
      }
      const PairedBatch batch = make_paired_batch(poisoned, indices, norm);
      ++result.steps;
      RowGradients g;
      try {
        g = label_gradient(net, cp.params, batch, result.logits, cfg.studentLr, cfg.l1Weight);
      } catch (const DegenerateStepError&) {
        ++result.skippedSteps;
        continue;
      }
      for (std::size_t k = 0; k < g.rows.size(); ++k) {
        result.logits.logits.row(static_cast<Eigen::Index>(g.rows[k])) -=
            cfg.labelLr * g.grads.row(static_cast<Eigen::Index>(k));
      }
      sum += g.lParam;
      ++counted;
    }
    result.passMeanLParam.push_back(counted > 0 ? sum / static_cast<double>(counted) : 0.0);
  }
  return result;
}

std::vector<FlipRunResult> run_flip_runs(const std::vector<ExpertTrajectory>& trajectories,
                                         const LabeledDataset& poisoned, const FlipOptConfig& cfg, int jobs) {
  cfg.validate();
  std::vector<FlipRunResult> out(static_cast<std::size_t>(cfg.runs));
  const int width = std::max(1, jobs);
  for (int start = 0; start < cfg.runs; start += width) {
    std::vector<std::future<FlipRunResult>> running;
    for (int r = start; r < std::min(cfg.runs, start + width); ++r) {
      FlipOptConfig runCfg = cfg;
      runCfg.seed = run_seed(cfg.seed, r);
      running.push_back(std::async(width > 1 ? std::launch::async : std::launch::deferred,
                                   [&, runCfg] { return run_flip(trajectories, poisoned, runCfg); }));
    }
    for (std::size_t k = 0; k < running.size(); ++k) out[static_cast<std::size_t>(start) + k] = running[k].get();
  }
  return out;
}

// Files ----------------------------------------------------------------------------

namespace {
constexpr char kLogitMagic[10] = {'F', 'L', 'I', 'P', 'L', 'O', 'G', 'I', 'T', '1'};
}

std::string serialize_logits(const LogitTable& table, const LogitFileHeader& header) {
  std::ostringstream os(std::ios::binary);
  os.write(kLogitMagic, sizeof(kLogitMagic));
  write_le<std::uint64_t>(os, table.rows());
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(table.num_classes()));
  write_le<std::uint64_t>(os, header.configHash);
  write_le<std::uint64_t>(os, header.seed);
  for (Eigen::Index i = 0; i < table.logits.rows(); ++i) {
    for (Eigen::Index c = 0; c < table.logits.cols(); ++c) write_le<float>(os, static_cast<float>(table.logits(i, c)));
  }
  return os.str();
}

LogitTable parse_logits(std::span<const char> bytes, LogitFileHeader* header) {
  std::istringstream is(std::string(bytes.data(), bytes.size()), std::ios::binary);
  char magic[sizeof(kLogitMagic)];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || !std::equal(magic, magic + sizeof(magic), kLogitMagic)) {
    throw ParseError("not a logit table (bad magic)");
  }
  const auto n = read_le<std::uint64_t>(is, "row count");
  const auto k = read_le<std::uint32_t>(is, "class count");
  LogitFileHeader h;
  h.configHash = read_le<std::uint64_t>(is, "config hash");
  h.seed = read_le<std::uint64_t>(is, "seed");
  const std::size_t expected = sizeof(kLogitMagic) + 8 + 4 + 8 + 8 + n * k * 4;
  if (bytes.size() != expected) {
    throw ParseError("logit table has " + std::to_string(bytes.size()) + " bytes, expected " + std::to_string(expected));
  }
  LogitTable t;
  t.logits.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < t.logits.rows(); ++i) {
    for (Eigen::Index c = 0; c < t.logits.cols(); ++c) t.logits(i, c) = read_le<float>(is, "logits");
  }
  if (header != nullptr) *header = h;
  return t;
}

void save_logits(const LogitTable& table, const LogitFileHeader& header, const std::string& path) {
  write_file_atomic(path, serialize_logits(table, header));
}

LogitTable load_logits(const std::string& path, LogitFileHeader* header) {
  const auto bytes = read_file(path);
  try {
    return parse_logits(bytes, header);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace flip

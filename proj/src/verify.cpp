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

#include "flip/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "flip/expert.hpp"
#include "flip/select.hpp"

namespace flip::verify {

double matching_objective(const Network& net, const ParamVector& theta, const PairedBatch& batch,
                          const LogitTable& table, double studentLr, double l1Weight) {
  const PairedSteps steps = paired_steps(net, theta, batch, student_targets(table, batch), studentLr);
  return l_param(theta, steps.expertNext, steps.studentNext) + l1_term(table, batch, l1Weight);
}

RowGradients fd_label_gradient(const Network& net, const ParamVector& theta, const PairedBatch& batch,
                               const LogitTable& table, double studentLr, double l1Weight, double eps) {
  if (!(eps >= 1e-5 && eps <= 1e-2)) throw ConfigError("finite-difference step must lie in [1e-5, 1e-2]");
  RowGradients out;
  out.rows = batch.rows;
  std::sort(out.rows.begin(), out.rows.end());
  out.rows.erase(std::unique(out.rows.begin(), out.rows.end()), out.rows.end());
  out.grads = Matrix::Zero(static_cast<Eigen::Index>(out.rows.size()), table.num_classes());
  LogitTable probe = table;
  for (std::size_t k = 0; k < out.rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(out.rows[k]);
    for (Eigen::Index c = 0; c < table.logits.cols(); ++c) {
      const double orig = table.logits(r, c);
      probe.logits(r, c) = orig + eps;
      const double up = matching_objective(net, theta, batch, probe, studentLr, l1Weight);
      probe.logits(r, c) = orig - eps;
      const double down = matching_objective(net, theta, batch, probe, studentLr, l1Weight);
      probe.logits(r, c) = orig;
      out.grads(static_cast<Eigen::Index>(k), c) = (up - down) / (2.0 * eps);
    }
  }
  const PairedSteps steps = paired_steps(net, theta, batch, student_targets(table, batch), studentLr);
  out.lParam = l_param(theta, steps.expertNext, steps.studentNext);
  out.penalty = l1_term(table, batch, l1Weight);
  return out;
}

std::vector<std::size_t> brute_select(std::span<const double> scores, std::size_t m) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(m, idx.size()));
  return idx;
}

std::array<double, 2> logistic_label_gradient(const LogisticInstance& inst) {
  const std::size_t d = inst.poisonInput.size();
  if (inst.weights.size() != 2 * d || inst.cleanInput.size() != d) throw ConfigError("logistic instance shapes disagree");
  auto probs = [](double z0, double z1) {
    const double m = std::max(z0, z1);
    const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    return std::array<double, 2>{e0 / (e0 + e1), e1 / (e0 + e1)};
  };
  auto logits = [&](const std::vector<double>& x) {
    std::array<double, 2> z = inst.bias;
    for (int k = 0; k < 2; ++k) {
      for (std::size_t j = 0; j < d; ++j) z[k] += inst.weights[k * d + j] * x[j];
    }
    return z;
  };
  const auto zp = logits(inst.poisonInput);
  const auto zc = logits(inst.cleanInput);
  const auto pp = probs(zp[0], zp[1]);
  const auto pc = probs(zc[0], zc[1]);
  const auto soft = probs(inst.logits[0], inst.logits[1]);

  // Cross-entropy gradient of a linear model: row k is (p_k - y_k) * [x; 1].
  double poisonNorm2 = 0.0;
  std::array<double, 2> gSoft{};
  for (int k = 0; k < 2; ++k) {
    const double ep = pp[k] - (k == inst.poisonLabel ? 1.0 : 0.0);
    const double ec = pc[k] - soft[k];
    double residualDotInput = 0.0;
    for (std::size_t j = 0; j <= d; ++j) {
      const double xp = j < d ? inst.poisonInput[j] : 1.0;
      const double xc = j < d ? inst.cleanInput[j] : 1.0;
      const double gp = ep * xp;
      const double gc = ec * xc;
      poisonNorm2 += gp * gp;
      residualDotInput += (gc - gp) * xc;
    }
    // d(gc_k)/d(soft_k) = -[x_c; 1]
    gSoft[k] = -2.0 * residualDotInput;
  }
  gSoft[0] /= poisonNorm2;
  gSoft[1] /= poisonNorm2;
  const double inner = soft[0] * gSoft[0] + soft[1] * gSoft[1];
  return {soft[0] * (gSoft[0] - inner), soft[1] * (gSoft[1] - inner)};
}

double relative_error(const Matrix& a, const Matrix& b, double floor) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<double>::infinity();
  const double denom = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / denom;
}

TinyInstance make_tiny_instance(std::uint64_t seed, int hidden, int classes, int batchSize, std::size_t tableRows) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ModelSpec spec;
  spec.arch = Architecture::tiny_mlp;
  spec.input = {1, 1, 2};
  spec.widths = {hidden};
  spec.numClasses = classes;
  Network net(spec);
  ParamVector theta = net.init_params(seed);
  for (Eigen::Index i = 0; i < theta.values.size(); ++i) theta.values[i] += 0.1 * normal(rng);

  std::vector<std::array<double, 2>> inputs(tableRows);
  std::vector<int> labels(tableRows);
  std::uniform_int_distribution<int> pickClass(0, classes - 1);
  for (std::size_t r = 0; r < tableRows; ++r) {
    inputs[r] = {normal(rng), normal(rng)};
    labels[r] = pickClass(rng);
  }
  const int target = classes - 1;

  PairedBatch batch;
  batch.poisoned = Tensor(batchSize, spec.input);
  batch.clean = Tensor(batchSize, spec.input);
  std::vector<int> poisonedLabels(static_cast<std::size_t>(batchSize));
  std::uniform_int_distribution<std::size_t> pickRow(0, tableRows - 1);
  std::bernoulli_distribution isPoison(0.4);
  std::bernoulli_distribution isFixed(0.3);
  for (int j = 0; j < batchSize; ++j) {
    const std::size_t r = pickRow(rng);
    const bool poison = isPoison(rng);
    batch.fixedTarget.push_back(!poison && isFixed(rng));
    batch.rows.push_back(r);
    batch.trueLabels.push_back(labels[r]);
    batch.clean.example(j)[0] = inputs[r][0];
    batch.clean.example(j)[1] = inputs[r][1];
    batch.poisoned.example(j)[0] = inputs[r][0] + (poison ? 1.5 : 0.0);
    batch.poisoned.example(j)[1] = inputs[r][1] + (poison ? -1.0 : 0.0);
    poisonedLabels[static_cast<std::size_t>(j)] = poison ? target : labels[r];
  }
  batch.poisonedTargets = one_hot(poisonedLabels, classes);

  LogitTable table = init_logits(labels, classes, 2.0);
  for (Eigen::Index i = 0; i < table.logits.size(); ++i) table.logits.data()[i] += normal(rng);
  return TinyInstance{std::move(net), std::move(theta), std::move(batch), std::move(table)};
}

namespace {

LogisticInstance random_logistic(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  LogisticInstance inst;
  inst.weights.resize(static_cast<std::size_t>(2 * d));
  for (auto& w : inst.weights) w = 0.5 * normal(rng);
  inst.bias = {0.2 * normal(rng), 0.2 * normal(rng)};
  inst.poisonInput.resize(static_cast<std::size_t>(d));
  inst.cleanInput.resize(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    inst.cleanInput[static_cast<std::size_t>(j)] = normal(rng);
    inst.poisonInput[static_cast<std::size_t>(j)] = inst.cleanInput[static_cast<std::size_t>(j)] + 0.8 * normal(rng);
  }
  inst.poisonLabel = 1;
  inst.logits = {2.0 + normal(rng), normal(rng)};
  return inst;
}

}  // namespace

std::vector<OracleReport> run_oracle_suite(std::uint64_t seed, int instances) {
  std::vector<OracleReport> reports;

  OracleReport fd{"label_gradient matches central differences (tiny-mlp 2-16-3, batch 8)", true, 0.0, 1e-3, ""};
  OracleReport ref{"closed-form label gradient matches per-class reference", true, 0.0, 1e-6, ""};
  for (int i = 0; i < instances; ++i) {
    const TinyInstance t = make_tiny_instance(derive_seed(seed, "oracle-tiny", static_cast<std::uint64_t>(i)));
    const double lambda = (i % 2 == 0) ? 0.0 : 0.3;
    const double eta = 0.1;
    const RowGradients g = label_gradient(t.net, t.theta, t.batch, t.table, eta, lambda);
    const RowGradients f = fd_label_gradient(t.net, t.theta, t.batch, t.table, eta, lambda, 1e-3);
    const RowGradients r = label_gradient_reference(t.net, t.theta, t.batch, t.table, eta, lambda);
    const std::size_t n = t.table.rows();
    const int k = t.table.num_classes();
    const double efd = relative_error(g.scatter(n, k), f.scatter(n, k));
    const double eref = g.rows == r.rows ? relative_error(g.grads, r.grads) : 1.0;
    fd.worst = std::max(fd.worst, efd);
    ref.worst = std::max(ref.worst, eref);
  }
  fd.passed = fd.worst < fd.tolerance;
  ref.passed = ref.worst < ref.tolerance;
  reports.push_back(fd);
  reports.push_back(ref);

  OracleReport logi{"label_gradient matches analytic logistic oracle", true, 0.0, 1e-8, ""};
  std::mt19937_64 rng(derive_seed(seed, "oracle-logistic", 0));
  for (int i = 0; i < instances; ++i) {
    const int d = 3;
    const LogisticInstance inst = random_logistic(rng, d);
    ModelSpec spec;
    spec.arch = Architecture::tiny_mlp;
    spec.input = {1, 1, d};
    spec.numClasses = 2;
    const Network net(spec);
    ParamVector theta(net.param_count());
    for (int k = 0; k < 2 * d; ++k) theta.values[k] = inst.weights[static_cast<std::size_t>(k)];
    theta.values[2 * d] = inst.bias[0];
    theta.values[2 * d + 1] = inst.bias[1];
    PairedBatch b;
    b.poisoned = Tensor(1, spec.input);
    b.clean = Tensor(1, spec.input);
    std::copy(inst.poisonInput.begin(), inst.poisonInput.end(), b.poisoned.data.begin());
    std::copy(inst.cleanInput.begin(), inst.cleanInput.end(), b.clean.data.begin());
    const int poisonLabel = inst.poisonLabel;
    b.poisonedTargets = one_hot(std::span<const int>(&poisonLabel, 1), 2);
    b.rows = {0};
    b.trueLabels = {0};
    LogitTable table;
    table.logits = Matrix(1, 2);
    table.logits << inst.logits[0], inst.logits[1];
    const RowGradients g = label_gradient(net, theta, b, table, 0.05, 0.0);
    const auto a = logistic_label_gradient(inst);
    Matrix am(1, 2);
    am << a[0], a[1];
    logi.worst = std::max(logi.worst, relative_error(g.grads, am));
  }
  logi.passed = logi.worst < logi.tolerance;
  reports.push_back(logi);

  OracleReport sel{"select_flips(high) equals brute-force sorted prefix", true, 0.0, 0.0, ""};
  std::mt19937_64 srng(derive_seed(seed, "oracle-select", 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  ScoreTable table(1000);
  std::vector<double> raw(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    raw[i] = std::round(normal(srng) * 20.0) / 4.0;  // coarse grid forces ties
    table[i] = {raw[i], 0};
  }
  for (std::size_t m : {std::size_t{0}, std::size_t{1}, std::size_t{150}, std::size_t{999}, std::size_t{1000}}) {
    const FlipSet fs = select_flips(table, m, SelectionStrategy::high);
    const auto brute = brute_select(raw, m);
    std::vector<std::size_t> got;
    for (const auto& e : fs.entries) got.push_back(e.index);
    if (got != brute) {
      sel.passed = false;
      sel.worst = 1.0;
      sel.detail += "mismatch at m=" + std::to_string(m) + " ";
    }
  }
  reports.push_back(sel);
  return reports;
}

}  // namespace flip::verify

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

#include <gtest/gtest.h>

#include <random>

#include "flip/verify.hpp"

namespace flip::verify {
namespace {

TEST(Verify, OracleSuitePasses) {
  for (const auto& r : run_oracle_suite(7, 6)) {
    EXPECT_TRUE(r.passed) << r.name << " worst " << r.worst << " tolerance " << r.tolerance;
    EXPECT_LE(r.worst, r.tolerance) << r.name;
  }
}

TEST(Verify, FiniteDifferencesConvergeAtSecondOrder) {
  const TinyInstance t = make_tiny_instance(3);
  const RowGradients exact = label_gradient(t.net, t.theta, t.batch, t.table, 0.1, 0.0);
  const RowGradients coarse = fd_label_gradient(t.net, t.theta, t.batch, t.table, 0.1, 0.0, 1e-2);
  const RowGradients fine = fd_label_gradient(t.net, t.theta, t.batch, t.table, 0.1, 0.0, 1e-3);
  const std::size_t n = t.table.rows();
  const Matrix e = exact.scatter(n, 3);
  const double eCoarse = (coarse.scatter(n, 3) - e).norm();
  const double eFine = (fine.scatter(n, 3) - e).norm();
  EXPECT_GT(eCoarse, 0.0);
  EXPECT_LT(eFine * 30.0, eCoarse);
  EXPECT_THROW(fd_label_gradient(t.net, t.theta, t.batch, t.table, 0.1, 0.0, 1e-1), ConfigError);
}

TEST(Verify, ObjectiveMatchesGradientBookkeeping) {
  const TinyInstance t = make_tiny_instance(4);
  const RowGradients g = label_gradient(t.net, t.theta, t.batch, t.table, 0.1, 0.3);
  EXPECT_NEAR(matching_objective(t.net, t.theta, t.batch, t.table, 0.1, 0.3), g.lParam + g.penalty, 1e-12);
}

TEST(Verify, BruteSelectEdges) {
  const std::vector<double> s{1.0, 3.0, 3.0, -2.0};
  EXPECT_TRUE(brute_select(s, 0).empty());
  EXPECT_EQ(brute_select(s, 4), (std::vector<std::size_t>{1, 2, 0, 3}));
  EXPECT_EQ(brute_select(s, 9).size(), 4u);
}

TEST(Verify, LogisticGradientIsShiftInvariant) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  LogisticInstance inst;
  inst.weights.resize(6);
  for (auto& w : inst.weights) w = g(rng);
  inst.bias = {g(rng), g(rng)};
  inst.cleanInput = {g(rng), g(rng), g(rng)};
  inst.poisonInput = {g(rng), g(rng), g(rng)};
  inst.poisonLabel = 1;
  inst.logits = {0.0, 0.0};
  const auto half = logistic_label_gradient(inst);
  EXPECT_NEAR(half[0], -half[1], 1e-12);
  inst.logits = {4.0, 4.0};
  const auto shifted = logistic_label_gradient(inst);
  EXPECT_NEAR(shifted[0], half[0], 1e-12);
}

TEST(Verify, RelativeError) {
  Matrix a(1, 2), b(1, 2);
  a << 3.0, 4.0;
  b << 3.0, 4.0;
  EXPECT_EQ(relative_error(a, b), 0.0);
  b << 0.0, 0.0;
  EXPECT_DOUBLE_EQ(relative_error(a, b), 1.0);
}

}  // namespace
}  // namespace flip::verify

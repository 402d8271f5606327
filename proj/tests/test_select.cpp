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

#include <filesystem>
#include <random>
#include <set>

#include "flip/select.hpp"
#include "flip/verify.hpp"

namespace flip {
namespace {

LogitTable table_of(std::initializer_list<std::initializer_list<double>> rows) {
  LogitTable t;
  t.logits = Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) t.logits(i, j++) = v;
    ++i;
  }
  return t;
}

LogitTable random_table(std::size_t n, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 2.0);
  LogitTable t;
  t.logits = Matrix(static_cast<Eigen::Index>(n), k);
  for (Eigen::Index i = 0; i < t.logits.size(); ++i) t.logits.data()[i] = g(rng);
  return t;
}

std::vector<int> random_labels(std::size_t n, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
  return y;
}

std::vector<std::size_t> indices(const FlipSet& f) {
  std::vector<std::size_t> out;
  for (const auto& e : f.entries) out.push_back(e.index);
  return out;
}

TEST(Score, ArithmeticAndShiftInvariance) {
  const std::vector<int> y{0, 0};
  const ScoreTable s = score_table(table_of({{5, 1, 0}, {1, 5, 0}}), y);
  EXPECT_EQ(s[0].score, -4.0);
  EXPECT_EQ(s[0].proposedLabel, 1);
  EXPECT_EQ(s[1].score, 4.0);
  EXPECT_EQ(s[1].proposedLabel, 1);
  const ScoreTable shifted = score_table(table_of({{15, 11, 10}, {4, 8, 3}}), y);
  EXPECT_EQ(shifted[0].score, -4.0);
  EXPECT_EQ(shifted[1].proposedLabel, 1);
  const ScoreTable tie = score_table(table_of({{0, 2, 2}}), std::vector<int>{0});
  EXPECT_EQ(tie[0].proposedLabel, 1);
}

TEST(Aggregate, MinScoreAndMeanSoftmaxProposal) {
  const std::vector<int> y{0};
  const LogitTable a = table_of({{0, 3, 0}});
  const LogitTable b = table_of({{0, -1, -5}});
  const std::vector<LogitTable> runs{a, b};
  const ScoreTable agg = aggregate_runs(runs, y);
  EXPECT_EQ(agg[0].score, -1.0);
  const std::vector<LogitTable> swapped{b, a};
  const ScoreTable agg2 = aggregate_runs(swapped, y);
  EXPECT_EQ(agg2[0].score, agg[0].score);
  EXPECT_EQ(agg2[0].proposedLabel, agg[0].proposedLabel);
  const std::vector<LogitTable> one{a};
  EXPECT_EQ(aggregate_runs(one, y)[0].score, score_table(a, y)[0].score);
}

TEST(Select, MatchesBruteForceOnFiveRunTables) {
  const std::size_t n = 1000;
  const auto y = random_labels(n, 10, 1);
  std::vector<LogitTable> runs;
  for (int r = 0; r < 5; ++r) runs.push_back(random_table(n, 10, 100 + static_cast<std::uint64_t>(r)));
  const ScoreTable agg = aggregate_runs(runs, y);
  std::vector<double> raw;
  for (const auto& e : agg) raw.push_back(e.score);
  for (std::size_t m : {0u, 1u, 150u, 999u, 1000u}) {
    EXPECT_EQ(indices(select_flips(agg, m, SelectionStrategy::high)), verify::brute_select(raw, m)) << m;
  }
}

TEST(Select, BudgetsNest) {
  const auto y = random_labels(300, 5, 2);
  const ScoreTable s = score_table(random_table(300, 5, 3), y);
  std::set<std::size_t> prev;
  for (std::size_t m : {0u, 10u, 50u, 120u, 300u}) {
    const auto idx = indices(select_flips(s, m, SelectionStrategy::high));
    const std::set<std::size_t> cur(idx.begin(), idx.end());
    EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
    prev = cur;
  }
}

TEST(Select, StrategiesEdgeCases) {
  const auto y = random_labels(50, 4, 4);
  const ScoreTable s = score_table(random_table(50, 4, 5), y);
  EXPECT_TRUE(select_flips(s, 0, SelectionStrategy::high).entries.empty());
  auto all = indices(select_flips(s, 50, SelectionStrategy::high));
  auto low = indices(select_flips(s, 50, SelectionStrategy::low));
  std::sort(all.begin(), all.end());
  std::sort(low.begin(), low.end());
  EXPECT_EQ(all, low);
  EXPECT_EQ(select_flips(s, 80, SelectionStrategy::high).size(), 50u);
  const auto r1 = select_flips(s, 10, SelectionStrategy::random, 1);
  const auto r2 = select_flips(s, 10, SelectionStrategy::random, 2);
  EXPECT_EQ(r1.size(), r2.size());
  EXPECT_NE(indices(r1), indices(r2));
  EXPECT_EQ(indices(r1), indices(select_flips(s, 10, SelectionStrategy::random, 1)));
  const auto lo = select_flips(s, 5, SelectionStrategy::low);
  for (const auto& e : lo.entries) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (std::find(indices(lo).begin(), indices(lo).end(), i) == indices(lo).end()) {
        ASSERT_LE(s[e.index].score, s[i].score);
      }
    }
  }
}

TEST(ApplyFlips, HammingDistanceAndErrors) {
  const auto y = random_labels(100, 10, 6);
  const ScoreTable s = score_table(random_table(100, 10, 7), y);
  const FlipSet f = select_flips(s, 30, SelectionStrategy::high);
  EXPECT_EQ(apply_flips(y, FlipSet{}), y);
  const auto flipped = apply_flips(y, f);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < y.size(); ++i) diff += flipped[i] != y[i];
  EXPECT_EQ(diff, f.size());
  std::vector<int> reverted = flipped;
  for (const auto& e : f.entries) reverted[e.index] = y[e.index];
  EXPECT_EQ(reverted, y);
  FlipSet dup{{{1, (y[1] + 1) % 10}, {1, (y[1] + 2) % 10}}, 2};
  EXPECT_THROW(apply_flips(y, dup), ConfigError);
  FlipSet out{{{100, 0}}, 1};
  EXPECT_THROW(apply_flips(y, out), ConfigError);
}

TEST(SoftFlip, AlgebraicProperties) {
  const std::size_t n = 200;
  const auto y = random_labels(n, 10, 8);
  std::vector<LogitTable> runs{random_table(n, 10, 9), random_table(n, 10, 10), random_table(n, 10, 11)};
  const SoftLabelTable one = soft_flip(runs, y, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 10; ++c) ASSERT_EQ(one.rows(static_cast<Eigen::Index>(i), c), c == y[i] ? 1.0 : 0.0);
  }
  EXPECT_EQ(discretize_soft(one), y);
  const SoftLabelTable zero = soft_flip(runs, y, 0.0);
  Matrix mean = (softmax_rows(runs[0].logits) + softmax_rows(runs[1].logits) + softmax_rows(runs[2].logits)) / 3.0;
  EXPECT_LT((zero.rows - mean).lpNorm<Eigen::Infinity>(), 1e-15);
  for (double a : {0.0, 0.3, 0.7, 1.0}) {
    const SoftLabelTable s = soft_flip(runs, y, a);
    for (Eigen::Index i = 0; i < s.rows.rows(); ++i) ASSERT_NEAR(s.rows.row(i).sum(), 1.0, 1e-6);
    EXPECT_LT((s.rows - (a * one.rows + (1 - a) * zero.rows)).lpNorm<Eigen::Infinity>(), 1e-12);
  }
  EXPECT_THROW(soft_flip(runs, y, 1.5), ConfigError);
}

TEST(Discretize, ArgmaxAndScaleInvariance) {
  SoftLabelTable s;
  s.rows = Matrix(3, 3);
  s.rows << 0.2, 0.5, 0.3, 0.4, 0.4, 0.2, 0.0, 0.0, 1.0;
  EXPECT_EQ(discretize_soft(s), (std::vector<int>{1, 0, 2}));
  SoftLabelTable scaled = s;
  scaled.rows.row(0) *= 7.0;
  scaled.rows.row(2) *= 0.1;
  EXPECT_EQ(discretize_soft(scaled), discretize_soft(s));
}

TEST(FlipSetFile, RoundTripAndErrors) {
  const auto y = random_labels(40, 3, 12);
  const FlipSet f = select_flips(score_table(random_table(40, 3, 13), y), 7, SelectionStrategy::high);
  const std::string text = serialize_flipset(f, 0xfeed);
  std::uint64_t h = 0;
  const FlipSet back = parse_flipset(text, &h);
  EXPECT_EQ(back.entries, f.entries);
  EXPECT_EQ(back.budget, 7u);
  EXPECT_EQ(h, 0xfeedu);
  EXPECT_EQ(serialize_flipset(back, h), text);
  EXPECT_THROW(parse_flipset("3,1\n", nullptr), ParseError);
  EXPECT_THROW(parse_flipset(text + "x,y\n", nullptr), ParseError);
  const auto path = (std::filesystem::temp_directory_path() / "flip_flipset_test.csv").string();
  save_flipset(f, 0xfeed, path);
  EXPECT_EQ(load_flipset(path).entries, f.entries);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace flip

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

#include <cmath>
#include <numeric>

#include "flip/eval.hpp"
#include "flip/verify.hpp"

namespace flip {
namespace {

ModelSpec linear_spec(const ImageShape& shape, int k) {
  ModelSpec s;
  s.arch = Architecture::tiny_mlp;
  s.input = shape;
  s.numClasses = k;
  return s;
}

TEST(Stats, MeanStderr) {
  const auto [m1, s1] = mean_stderr({4.0});
  EXPECT_EQ(m1, 4.0);
  EXPECT_EQ(s1, 0.0);
  const auto [m, s] = mean_stderr({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(s, std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
}

TEST(Metrics, CtaExtremes) {
  const LabeledDataset d = make_synthetic(5, 200, 10, 4);
  const ModelSpec spec = linear_spec(d.shape(), 10);
  const Network net(spec);
  ParamVector zero = net.init_params(1);
  zero.values.setZero();
  const AugmentationConfig norm;
  // Zero weights give uniform logits, so every prediction is class 0.
  const auto zeros = std::count(d.labels().begin(), d.labels().end(), 0);
  EXPECT_DOUBLE_EQ(cta(net, zero, d, norm), 100.0 * static_cast<double>(zeros) / 200.0);
  const LabeledDataset all0 = d.with_labels(std::vector<int>(d.size(), 0));
  EXPECT_EQ(cta(net, zero, all0, norm), 100.0);
}

TEST(Metrics, PtaSubsetsAndExtremes) {
  const LabeledDataset d = make_synthetic(6, 300, 10, 32);
  const auto src = pta_subset(d, PtaSubset::source_class, 9, 4);
  const auto nonTarget = pta_subset(d, PtaSubset::all_but_target, 9, 4);
  EXPECT_EQ(src.size(), static_cast<std::size_t>(std::count(d.labels().begin(), d.labels().end(), 9)));
  EXPECT_EQ(nonTarget.size(), d.size() - static_cast<std::size_t>(std::count(d.labels().begin(), d.labels().end(), 4)));
  const ModelSpec spec = linear_spec(d.shape(), 10);
  const Network net(spec);
  ParamVector p = net.init_params(1);
  p.values.setZero();
  const TriggerSpec trig = TriggerSpec::pixel_default();
  const AugmentationConfig norm;
  EXPECT_EQ(pta(net, p, d, trig, PtaSubset::source_class, 9, 4, norm), 0.0);
  EXPECT_EQ(pta(net, p, d, trig, PtaSubset::source_class, 9, 0, norm), 100.0);
}

TEST(Baselines, InnerProductMatchesBruteForce) {
  const LabeledDataset d = make_synthetic(7, 400, 10, 8);
  const TriggerSpec trig = TriggerSpec::sinusoidal_default();
  const auto pattern = trigger_pattern(trig, d.shape());
  std::vector<std::size_t> cand;
  std::vector<double> scores;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.label(i) != 9) continue;
    cand.push_back(i);
    const auto px = d.pixels(i);
    double s = 0.0;
    for (std::size_t j = 0; j < px.size(); ++j) s += static_cast<double>(px[j]) * pattern[j];
    scores.push_back(s);
  }
  for (std::size_t m : {0u, 5u, 20u}) {
    const FlipSet f = baseline_inner_product(d, trig, m, true, 9, 4);
    const auto order = verify::brute_select(scores, m);
    ASSERT_EQ(f.size(), order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      EXPECT_EQ(f.entries[k].index, cand[order[k]]);
      EXPECT_EQ(f.entries[k].newLabel, 4);
    }
  }
}

TEST(Baselines, EqualImagesFallBackToIndexOrder) {
  const ImageShape shape{3, 8, 8};
  LabeledDataset d(shape, 10);
  const Image img(shape, 0.3f);
  for (int i = 0; i < 12; ++i) d.add(img.pixels, i % 2 == 0 ? 9 : 1);
  const FlipSet f = baseline_inner_product(d, TriggerSpec::sinusoidal_default(), 3, true, 9, 4);
  ASSERT_EQ(f.size(), 3u);
  EXPECT_EQ(f.entries[0].index, 0u);
  EXPECT_EQ(f.entries[1].index, 2u);
  EXPECT_EQ(f.entries[2].index, 4u);
}

TEST(Baselines, RandomCoversCandidates) {
  const LabeledDataset d = make_synthetic(8, 200, 10, 4);
  const auto candidates = pta_subset(d, PtaSubset::all_but_target, 9, 4);
  const FlipSet all = baseline_random(d, candidates.size(), 3, false, 9, 4);
  ASSERT_EQ(all.size(), candidates.size());
  for (std::size_t k = 0; k < all.size(); ++k) EXPECT_EQ(all.entries[k].index, candidates[k]);
  EXPECT_EQ(baseline_random(d, 10, 3, false, 9, 4).entries, baseline_random(d, 10, 3, false, 9, 4).entries);
  EXPECT_NE(baseline_random(d, 10, 3, false, 9, 4).entries, baseline_random(d, 10, 4, false, 9, 4).entries);
  EXPECT_TRUE(baseline_random(d, 0, 3, true, 9, 4).entries.empty());
  EXPECT_THROW(baseline_random(d, candidates.size() + 1, 3, false, 9, 4), ConfigError);
}

TEST(Tradeoff, SortedRowsAndCsv) {
  const LabeledDataset train = make_synthetic(9, 120, 10, 8);
  const LabeledDataset test = make_synthetic(10, 60, 10, 8);
  const ModelSpec spec = linear_spec(train.shape(), 10);
  EvalConfig cfg;
  cfg.repeats = 1;
  cfg.train.epochs = 1;
  cfg.train.batchSize = 30;
  cfg.train.lrMilestones = {};
  cfg.train.augment = false;
  cfg.train.optimizer.lr = 0.05;
  std::vector<EvalPoint> pts{{2.0, train.labels()}, {0.0, train.labels()}, {1.0, train.labels()}};
  const EvalResult r = tradeoff_curve(pts, train, test, spec, cfg, TriggerSpec::sinusoidal_default(), 9, 4, 11);
  ASSERT_EQ(r.rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.rows[i].point, static_cast<double>(i));
    EXPECT_EQ(r.rows[i].ctaStderr, 0.0);
    EXPECT_EQ(r.rows[i].ptaStderr, 0.0);
    EXPECT_EQ(r.rows[i].seed0, user_seed(11, 0));
  }
  // Identical labels with a shared seed give identical users.
  EXPECT_EQ(r.rows[0].ctaMean, r.rows[2].ctaMean);
  const std::string csv = eval_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "point,cta_mean,cta_stderr,pta_mean,pta_stderr,repeats,seed0");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const std::string svg = tradeoff_svg({{"flip", r}});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("flip"), std::string::npos);
}

TEST(Tradeoff, UserTrainingRejectsPoisonedData) {
  const LabeledDataset d = make_synthetic(1, 20, 10, 8);
  const LabeledDataset p = build_poisoned_dataset(d, 0, 1, TriggerSpec::sinusoidal_default());
  const ModelSpec spec = linear_spec(d.shape(), 10);
  TrainConfig c;
  ASSERT_GT(p.poison_count(), 0u);
  EXPECT_THROW(train_user(p, p.labels(), spec, c), ConfigError);
  EXPECT_THROW(train_user(d, std::vector<int>(3, 0), spec, c), ConfigError);
}

}  // namespace
}  // namespace flip

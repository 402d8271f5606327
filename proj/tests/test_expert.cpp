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

#include "flip/eval.hpp"
#include "flip/expert.hpp"

namespace flip {
namespace {

ModelSpec linear_spec(ImageShape in, int k) {
  ModelSpec s;
  s.arch = Architecture::tiny_mlp;
  s.input = in;
  s.numClasses = k;
  return s;
}

TrainConfig quick_cfg(int epochs, int batch, int stride) {
  TrainConfig c;
  c.epochs = epochs;
  c.batchSize = batch;
  c.checkpointStride = stride;
  c.lrMilestones = {};
  c.augment = false;
  c.optimizer.lr = 0.05;
  c.seed = 3;
  return c;
}

double train_accuracy(const Network& net, const ParamVector& p, const LabeledDataset& d, const TrainConfig& c) {
  const auto pred = predict(net, p, d, c.augmentation);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < d.size(); ++i) ok += pred[i] == d.label(i);
  return 100.0 * static_cast<double>(ok) / static_cast<double>(d.size());
}

TEST(Expert, LinearClassifierFitsSyntheticData) {
  const LabeledDataset d = make_synthetic(1, 100, 2, 8);
  const ModelSpec s = linear_spec(d.shape(), 2);
  const Network net(s);
  const TrainConfig c = quick_cfg(30, 10, 1000);
  const ParamVector p = train_model(net, d, one_hot(d.labels(), 2), c, net.init_params(1));
  EXPECT_GE(train_accuracy(net, p, d, c), 95.0);
}

TEST(Expert, TrainingImprovesAccuracy) {
  const LabeledDataset d = make_synthetic(2, 200, 4, 8);
  ModelSpec s = linear_spec(d.shape(), 4);
  s.widths = {16};
  const TrainConfig c = quick_cfg(5, 20, 10);
  const ExpertTrajectory t = train_expert(d, s, c);
  const Network net(s);
  EXPECT_GT(train_accuracy(net, t.checkpoints.back().params, d, c),
            train_accuracy(net, t.checkpoints.front().params, d, c));
}

TEST(Expert, ZeroEpochsRecordsOnlyInit) {
  const LabeledDataset d = make_synthetic(1, 40, 2, 4);
  const ModelSpec s = linear_spec(d.shape(), 2);
  const ExpertTrajectory t = train_expert(d, s, quick_cfg(0, 8, 5));
  ASSERT_EQ(t.checkpoints.size(), 1u);
  EXPECT_EQ(t.checkpoints[0].globalStep, 0);
  EXPECT_EQ(t.checkpoints[0].params.values, Network(s).init_params(3).values);
}

TEST(Expert, CheckpointStepsAreArithmetic) {
  const LabeledDataset d = make_synthetic(1, 40, 2, 4);
  const TrainConfig c = quick_cfg(3, 8, 4);
  const ExpertTrajectory t = train_expert(d, linear_spec(d.shape(), 2), c);
  // 5 iterations per epoch, 15 in total: steps 0, 4, 8, 12.
  ASSERT_EQ(t.checkpoints.size(), 4u);
  for (std::size_t i = 0; i < t.checkpoints.size(); ++i) {
    EXPECT_EQ(t.checkpoints[i].globalStep, static_cast<std::int64_t>(4 * i));
  }
}

TEST(Expert, CifarScaleCheckpointCount) {
  TrainConfig c;
  c.epochs = 20;
  c.batchSize = 256;
  c.checkpointStride = 50;
  const std::size_t iters = c.iterations_per_epoch(50000) * static_cast<std::size_t>(c.epochs);
  EXPECT_EQ(c.iterations_per_epoch(50000), 196u);
  EXPECT_EQ(1 + iters / static_cast<std::size_t>(c.checkpointStride), 79u);
}

TEST(Expert, DeterministicAndIndependentExperts) {
  const LabeledDataset d = make_synthetic(1, 40, 2, 4);
  ModelSpec s = linear_spec(d.shape(), 2);
  s.widths = {4};
  const TrainConfig c = quick_cfg(2, 8, 3);
  const ExpertTrajectory a = train_expert(d, s, c);
  EXPECT_EQ(serialize_trajectory(a), serialize_trajectory(train_expert(d, s, c)));
  const auto one = train_experts(d, s, c, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(serialize_trajectory(one[0]), serialize_trajectory(a));
  const auto two = train_experts(d, s, c, 2, 2);
  EXPECT_NE(two[0].checkpoints[0].params.values, two[1].checkpoints[0].params.values);
  EXPECT_EQ(serialize_trajectory(two[1]), serialize_trajectory(train_experts(d, s, c, 2, 1)[1]));
}

TEST(Trajectory, RoundTripAndErrors) {
  const LabeledDataset d = make_synthetic(1, 40, 2, 4);
  ModelSpec s = linear_spec(d.shape(), 2);
  s.widths = {3};
  TrainConfig c = quick_cfg(1, 8, 2);
  c.storage = StorageType::float64;
  c.recordBatches = true;
  ExpertTrajectory t = train_expert(d, s, c);
  t.configHash = 0xabcdef;
  const auto path = (std::filesystem::temp_directory_path() / "flip_traj_test.traj").string();
  save_trajectory(t, path);
  TrajectoryLoadOptions opts;
  opts.expectedSpec = &s;
  opts.expectedFingerprint = d.fingerprint();
  const LoadedTrajectory lt = load_trajectory(path, opts);
  EXPECT_TRUE(lt.warnings.empty());
  ASSERT_EQ(lt.trajectory.checkpoints.size(), t.checkpoints.size());
  for (std::size_t i = 0; i < t.checkpoints.size(); ++i) {
    EXPECT_EQ(lt.trajectory.checkpoints[i].params.values, t.checkpoints[i].params.values);
    EXPECT_EQ(lt.trajectory.checkpoints[i].batch, t.checkpoints[i].batch);
  }
  EXPECT_EQ(lt.trajectory.configHash, 0xabcdefu);
  EXPECT_EQ(peek_trajectory_config_hash(path), 0xabcdefu);

  const std::string bytes = serialize_trajectory(t);
  EXPECT_THROW(parse_trajectory(std::span<const char>(bytes.data(), bytes.size() - 5)), ParseError);

  ModelSpec other = s;
  other.widths = {5};
  opts.expectedSpec = &other;
  try {
    parse_trajectory(std::span<const char>(bytes.data(), bytes.size()), opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(hex64(s.hash())), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(hex64(other.hash())), std::string::npos);
  }
  opts.expectedSpec = &s;
  opts.expectedFingerprint = 12345;
  EXPECT_EQ(parse_trajectory(std::span<const char>(bytes.data(), bytes.size()), opts).warnings.size(), 1u);
  std::filesystem::remove(path);
}

TEST(Trajectory, Float32StorageIsStableAfterOneRoundTrip) {
  const LabeledDataset d = make_synthetic(1, 40, 2, 4);
  const ExpertTrajectory t = train_expert(d, linear_spec(d.shape(), 2), quick_cfg(1, 8, 2));
  const std::string once = serialize_trajectory(t);
  const ExpertTrajectory back = parse_trajectory(std::span<const char>(once.data(), once.size())).trajectory;
  EXPECT_EQ(serialize_trajectory(back), once);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.batchSize = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.checkpointStride = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace flip

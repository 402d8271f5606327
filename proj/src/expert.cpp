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

#include "flip/expert.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <numeric>
#include <random>
#include <sstream>

#include "flip/json_io.hpp"

namespace flip {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batchSize < 1) throw ConfigError("batch size must be >= 1");
  if (checkpointStride < 1) throw ConfigError("checkpoint stride must be >= 1");
  if (!(optimizer.lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  augmentation.validate();
}

std::size_t TrainConfig::iterations_per_epoch(std::size_t datasetSize) const {
  const auto b = static_cast<std::size_t>(batchSize);
  return (datasetSize + b - 1) / b;
}

Matrix one_hot(std::span<const int> labels, int numClasses) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), numClasses);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= numClasses) throw ConfigError("label outside class range");
    m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return m;
}

Tensor assemble_batch(const LabeledDataset& data, std::span<const std::size_t> indices,
                      const AugmentationConfig& cfg, bool augment_images, std::uint64_t augSeed, int epoch) {
  Tensor t(static_cast<int>(indices.size()), data.shape());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t i = indices[b];
    if (augment_images) {
      std::mt19937_64 rng(derive_seed(augSeed, static_cast<std::uint64_t>(epoch), i));
      const Image img = augment(data.image(i), rng, cfg);
      if (!(img.shape == data.shape())) throw ConfigError("augmentation changed the image size");
      normalize_into(img.pixels, img.shape, cfg, t.example(static_cast<int>(b)));
    } else {
      normalize_into(data.pixels(i), data.shape(), cfg, t.example(static_cast<int>(b)));
    }
  }
  return t;
}

Tensor assemble_clean_batch(const LabeledDataset& data, std::span<const std::size_t> indices,
                            const AugmentationConfig& cfg) {
  std::vector<std::size_t> clean(indices.size());
  std::transform(indices.begin(), indices.end(), clean.begin(), [&](std::size_t i) { return data.clean_index(i); });
  return assemble_batch(data, clean, cfg);
}

ParamVector train_model(const Network& net, const LabeledDataset& data, const Matrix& targets,
                        const TrainConfig& cfg, ParamVector params, const StepObserver& observer) {
  cfg.validate();
  if (targets.rows() != static_cast<Eigen::Index>(data.size()) || targets.cols() != net.spec().numClasses) {
    throw ConfigError("targets do not match dataset");
  }
  if (data.empty()) throw ConfigError("cannot train on an empty dataset");
  OptimizerState state = OptimizerState::zeros(cfg.optimizer.kind, params.size());
  const LrSchedule schedule{cfg.optimizer.lr, cfg.lrMilestones, cfg.lrGamma};
  std::vector<std::size_t> order(data.size());
  std::int64_t step = 0;
  const auto b = static_cast<std::size_t>(cfg.batchSize);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffleRng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffleRng);
    OptimizerHyper hyper = cfg.optimizer;
    hyper.lr = schedule.at_epoch(epoch);

    for (std::size_t start = 0; start < order.size(); start += b) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(b, order.size() - start));
      if (observer) observer(step, params, batch);
      const Tensor x = assemble_batch(data, batch, cfg.augmentation, cfg.augment, cfg.seed, epoch);
      Matrix y(static_cast<Eigen::Index>(batch.size()), targets.cols());
      for (std::size_t r = 0; r < batch.size(); ++r) y.row(static_cast<Eigen::Index>(r)) = targets.row(static_cast<Eigen::Index>(batch[r]));
      const LossAndGrad lg = net.ce_loss_and_grad(params, x, y);
      auto [next, nextState] = optimizer_step(params, lg.grad, state, hyper);
      params = std::move(next);
      state = std::move(nextState);
      ++step;
    }
  }
  if (observer) observer(step, params, {});
  return params;
}

// Experts ------------------------------------------------------------------------

ExpertTrajectory train_expert(const LabeledDataset& poisoned, const ModelSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  if (poisoned.size() < static_cast<std::size_t>(cfg.batchSize)) {
    throw ConfigError("dataset has fewer examples than one batch");
  }
  const Network net(spec);
  ExpertTrajectory traj;
  traj.config = cfg;
  traj.spec = spec;
  traj.datasetFingerprint = poisoned.fingerprint();
  const Matrix targets = one_hot(poisoned.labels(), spec.numClasses);
  const auto stride = static_cast<std::int64_t>(cfg.checkpointStride);
  train_model(net, poisoned, targets, cfg, net.init_params(cfg.seed),
              [&](std::int64_t step, const ParamVector& params, std::span<const std::size_t> batch) {
                if (step % stride != 0) return;
                Checkpoint cp;
                cp.globalStep = step;
                cp.params = params;
                if (cfg.recordBatches) cp.batch.assign(batch.begin(), batch.end());
                traj.checkpoints.push_back(std::move(cp));
              });
  return traj;
}

std::uint64_t expert_seed(std::uint64_t baseSeed, int index) {
  return derive_seed(baseSeed, "expert", static_cast<std::uint64_t>(index));
}

std::vector<ExpertTrajectory> train_experts(const LabeledDataset& poisoned, const ModelSpec& spec,
                                            const TrainConfig& baseCfg, int count, int jobs) {
  if (count < 1) throw ConfigError("need at least one expert");
  auto cfgFor = [&](int i) {
    TrainConfig cfg = baseCfg;
    // A single expert keeps the base seed so E=1 reproduces train_expert exactly.
    cfg.seed = count == 1 ? baseCfg.seed : expert_seed(baseCfg.seed, i);
    return cfg;
  };
  std::vector<ExpertTrajectory> out(static_cast<std::size_t>(count));
  const int width = std::max(1, jobs);
  for (int start = 0; start < count; start += width) {
    std::vector<std::future<ExpertTrajectory>> running;
    for (int i = start; i < std::min(count, start + width); ++i) {
      running.push_back(std::async(width > 1 ? std::launch::async : std::launch::deferred,
                                   [&, i] { return train_expert(poisoned, spec, cfgFor(i)); }));
    }
    for (std::size_t k = 0; k < running.size(); ++k) out[static_cast<std::size_t>(start) + k] = running[k].get();
  }
  return out;
}

// Trajectory files ---------------------------------------------------------------

namespace {
constexpr char kTrajMagic[9] = {'F', 'L', 'I', 'P', 'T', 'R', 'A', 'J', '1'};
constexpr int kTrajVersion = 1;
}  // namespace

std::string serialize_trajectory(const ExpertTrajectory& traj) {
  const std::size_t n = traj.checkpoints.empty() ? 0 : traj.checkpoints.front().params.size();
  json meta{{"version", kTrajVersion},
            {"spec", traj.spec},
            {"spec_hash", hex64(traj.spec.hash())},
            {"config", traj.config},
            {"dataset_fingerprint", hex64(traj.datasetFingerprint)},
            {"config_hash", hex64(traj.configHash)},
            {"checkpoint_count", traj.checkpoints.size()},
            {"param_count", n},
            {"storage", traj.config.storage == StorageType::float64 ? "float64" : "float32"}};
  const std::string header = meta.dump();
  std::ostringstream os(std::ios::binary);
  os.write(kTrajMagic, sizeof(kTrajMagic));
  write_le<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& cp : traj.checkpoints) {
    if (cp.params.size() != n) throw ConfigError("checkpoints differ in parameter count");
    write_le<std::int64_t>(os, cp.globalStep);
    write_le<std::uint64_t>(os, cp.batch.size());
    for (auto idx : cp.batch) write_le<std::uint32_t>(os, idx);
    for (Eigen::Index i = 0; i < cp.params.values.size(); ++i) {
      if (traj.config.storage == StorageType::float64) write_le<double>(os, cp.params.values[i]);
      else write_le<float>(os, static_cast<float>(cp.params.values[i]));
    }
  }
  return os.str();
}

std::uint64_t peek_trajectory_config_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  char magic[sizeof(kTrajMagic)];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || !std::equal(magic, magic + sizeof(magic), kTrajMagic)) {
    throw ParseError(path + ": not a trajectory file (bad magic)");
  }
  const auto headerLen = read_le<std::uint64_t>(is, "trajectory header length");
  if (headerLen > (1u << 26)) throw ParseError(path + ": implausible trajectory header length");
  std::string header(headerLen, '\0');
  is.read(header.data(), static_cast<std::streamsize>(headerLen));
  if (static_cast<std::uint64_t>(is.gcount()) != headerLen) throw ParseError(path + ": truncated trajectory header");
  try {
    return parse_hex64(json::parse(header).at("config_hash").get<std::string>());
  } catch (const json::exception& e) {
    throw ParseError(path + ": bad trajectory metadata: " + e.what());
  }
}

void save_trajectory(const ExpertTrajectory& traj, const std::string& path) {
  write_file_atomic(path, serialize_trajectory(traj));
}

LoadedTrajectory parse_trajectory(std::span<const char> bytes, const TrajectoryLoadOptions& opts) {
  std::istringstream is(std::string(bytes.data(), bytes.size()), std::ios::binary);
  char magic[sizeof(kTrajMagic)];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || !std::equal(magic, magic + sizeof(magic), kTrajMagic)) {
    throw ParseError("not a trajectory file (bad magic)");
  }
  const auto headerLen = read_le<std::uint64_t>(is, "trajectory header length");
  if (headerLen > bytes.size()) throw ParseError("trajectory header length exceeds file size");
  std::string header(headerLen, '\0');
  is.read(header.data(), static_cast<std::streamsize>(headerLen));
  if (static_cast<std::uint64_t>(is.gcount()) != headerLen) throw ParseError("truncated trajectory header");

  json meta;
  try {
    meta = json::parse(header);
  } catch (const json::exception& e) {
    throw ParseError(std::string("corrupt trajectory header: ") + e.what());
  }
  LoadedTrajectory out;
  ExpertTrajectory& traj = out.trajectory;
  try {
    if (meta.at("version").get<int>() != kTrajVersion) {
      throw ParseError("trajectory version " + std::to_string(meta.at("version").get<int>()) +
                       " not supported (expected " + std::to_string(kTrajVersion) + ")");
    }
    meta.at("spec").get_to(traj.spec);
    meta.at("config").get_to(traj.config);
    traj.datasetFingerprint = parse_hex64(meta.at("dataset_fingerprint").get<std::string>());
    traj.configHash = parse_hex64(meta.value("config_hash", std::string("0")));
  } catch (const json::exception& e) {
    throw ParseError(std::string("corrupt trajectory header: ") + e.what());
  }
  const std::uint64_t storedSpecHash = parse_hex64(meta.at("spec_hash").get<std::string>());
  if (storedSpecHash != traj.spec.hash()) throw ParseError("trajectory spec hash does not match its spec");
  if (opts.expectedSpec != nullptr && opts.expectedSpec->hash() != storedSpecHash) {
    throw ParseError("trajectory was recorded for model spec " + hex64(storedSpecHash) +
                     " but model spec " + hex64(opts.expectedSpec->hash()) + " was requested");
  }
  if (opts.expectedFingerprint && *opts.expectedFingerprint != traj.datasetFingerprint) {
    out.warnings.push_back("trajectory dataset fingerprint " + hex64(traj.datasetFingerprint) +
                           " differs from expected " + hex64(*opts.expectedFingerprint));
  }

  const auto count = meta.at("checkpoint_count").get<std::uint64_t>();
  const auto n = meta.at("param_count").get<std::uint64_t>();
  const bool f64 = meta.at("storage").get<std::string>() == "float64";
  traj.checkpoints.reserve(count);
  for (std::uint64_t c = 0; c < count; ++c) {
    Checkpoint cp;
    cp.globalStep = read_le<std::int64_t>(is, "checkpoint step");
    if (!traj.checkpoints.empty() && cp.globalStep <= traj.checkpoints.back().globalStep) {
      throw ParseError("checkpoint steps are not strictly increasing");
    }
    const auto batchLen = read_le<std::uint64_t>(is, "checkpoint batch length");
    if (batchLen > bytes.size()) throw ParseError("corrupt checkpoint batch length");
    cp.batch.resize(batchLen);
    for (auto& idx : cp.batch) idx = read_le<std::uint32_t>(is, "checkpoint batch");
    cp.params = ParamVector(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      cp.params.values[static_cast<Eigen::Index>(i)] =
          f64 ? read_le<double>(is, "checkpoint parameters") : static_cast<double>(read_le<float>(is, "checkpoint parameters"));
    }
    traj.checkpoints.push_back(std::move(cp));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes after last checkpoint");
  return out;
}

LoadedTrajectory load_trajectory(const std::string& path, const TrajectoryLoadOptions& opts) {
  const auto bytes = read_file(path);
  try {
    return parse_trajectory(bytes, opts);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace flip

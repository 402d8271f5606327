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

#ifndef FLIP_MODEL_HPP_
#define FLIP_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "flip/common.hpp"
#include "flip/data.hpp"

namespace flip {

enum class Architecture { tiny_mlp, small_cnn, resnet_like };

std::string to_string(Architecture arch);
Architecture architecture_from_string(const std::string& s);

/// Network description. `widths` are hidden units (tiny-mlp) or conv channels
/// per stage (small-cnn, resnet-like).
struct ModelSpec {
  Architecture arch = Architecture::tiny_mlp;
  ImageShape input{1, 1, 2};
  std::vector<int> widths;
  int numClasses = 2;
  int blocksPerStage = 1;  ///< resnet-like only

  void validate() const;
  /// Stable hash of every field; trajectories and parameter files carry it.
  std::uint64_t hash() const;
  bool operator==(const ModelSpec&) const = default;
};

/// Batch of inputs in (N, C, H, W) order.
struct Tensor {
  int n = 0;
  ImageShape shape{1, 1, 1};
  std::vector<double, Eigen::aligned_allocator<double>> data;

  Tensor() = default;
  Tensor(int batch, ImageShape s) : n(batch), shape(s), data(static_cast<std::size_t>(batch) * s.size(), 0.0) {}

  std::size_t per_example() const { return shape.size(); }
  double* example(int i) { return data.data() + static_cast<std::size_t>(i) * per_example(); }
  const double* example(int i) const { return data.data() + static_cast<std::size_t>(i) * per_example(); }
};

struct ParamRecord {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};
using ParamLayout = std::vector<ParamRecord>;

/// Flat parameter vector; the layout is a function of the ModelSpec alone.
struct ParamVector {
  Eigen::VectorXd values;

  ParamVector() = default;
  explicit ParamVector(std::size_t n) : values(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))) {}
  explicit ParamVector(Eigen::VectorXd v) : values(std::move(v)) {}

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  bool operator==(const ParamVector& o) const {
    return values.size() == o.values.size() && values == o.values;
  }
};

/// Splits a flat vector into one named block per layout record.
std::vector<std::pair<std::string, std::vector<double>>> unflatten(const ParamVector& p, const ParamLayout& layout);
ParamVector flatten(const std::vector<std::pair<std::string, std::vector<double>>>& blocks, const ParamLayout& layout);

namespace detail {
class Layer;
}

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Instantiated architecture. All methods are const and free of hidden state.
class Network {
 public:
  explicit Network(ModelSpec spec);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const ModelSpec& spec() const { return spec_; }
  std::size_t param_count() const { return paramCount_; }
  const ParamLayout& layout() const { return layout_; }

  ParamVector init_params(std::uint64_t seed) const;

  /// Logits, one row per example.
  Matrix forward(const ParamVector& params, const Tensor& images) const;

  /// Batch-mean cross entropy against soft targets and its parameter gradient.
  LossAndGrad ce_loss_and_grad(const ParamVector& params, const Tensor& images, const Matrix& softLabels) const;

  /// grad_c = d/dtheta (-log softmax(f(x))_c) for every class c of a single example.
  std::vector<ParamVector> per_class_nll_grads(const ParamVector& params, const Tensor& image) const;

  /// Directional derivative of the logits along `direction` in parameter space.
  Matrix logits_jvp(const ParamVector& params, const Tensor& images, const ParamVector& direction) const;

 private:
  void check_input(const ParamVector& params, const Tensor& images) const;
  /// Runs every layer and keeps each intermediate activation.
  std::vector<Tensor> forward_all(const ParamVector& params, const Tensor& images) const;
  ParamVector backward(const ParamVector& params, const std::vector<Tensor>& acts, const Matrix& logitGrad) const;

  ModelSpec spec_;
  std::vector<std::unique_ptr<detail::Layer>> layers_;
  std::vector<std::size_t> offsets_;
  std::size_t paramCount_ = 0;
  ParamLayout layout_;
};

/// Throws ConfigError unless every row is a probability vector (tolerance 1e-6).
void check_simplex_rows(const Matrix& rows);

Matrix softmax_rows(const Matrix& logits);
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// Optimizers ----------------------------------------------------------------

enum class OptimizerKind { sgd_nesterov, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& s);

struct OptimizerHyper {
  OptimizerKind kind = OptimizerKind::sgd_nesterov;
  double lr = 0.1;
  double weightDecay = 2e-4;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd_nesterov;
  Eigen::VectorXd first;   ///< momentum buffer or Adam first moment
  Eigen::VectorXd second;  ///< Adam second moment
  std::int64_t step = 0;

  static OptimizerState zeros(OptimizerKind kind, std::size_t n);
};

/// One update with coupled weight decay (lambda * theta added to the gradient).
std::pair<ParamVector, OptimizerState> optimizer_step(const ParamVector& params, const ParamVector& grad,
                                                      const OptimizerState& state, const OptimizerHyper& hyper);

/// Step decay: base * gamma^(number of milestones <= epoch).
struct LrSchedule {
  double base = 0.1;
  std::vector<int> milestones;
  double gamma = 0.1;

  double at_epoch(int epoch) const;
};

// Serialization ------------------------------------------------------------------

enum class StorageType : std::uint8_t { float32 = 4, float64 = 8 };

std::string serialize_params(const ParamVector& params, const ModelSpec& spec, StorageType type);
ParamVector parse_params(std::span<const char> bytes, const ModelSpec& expected);

}  // namespace flip

#endif  // FLIP_MODEL_HPP_

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

#include "flip/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "layers.hpp"

namespace flip {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::tiny_mlp: return "tiny-mlp";
    case Architecture::small_cnn: return "small-cnn";
    case Architecture::resnet_like: return "resnet-like";
  }
  return "unknown";
}

Architecture architecture_from_string(const std::string& s) {
  if (s == "tiny-mlp") return Architecture::tiny_mlp;
  if (s == "small-cnn") return Architecture::small_cnn;
  if (s == "resnet-like") return Architecture::resnet_like;
  throw ConfigError("unknown architecture '" + s + "'");
}

void ModelSpec::validate() const {
  if (numClasses < 2) throw ConfigError("model needs at least two classes");
  if (input.channels < 1 || input.height < 1 || input.width < 1) throw ConfigError("bad model input shape");
  for (int w : widths) {
    if (w < 1) throw ConfigError("layer widths must be positive");
  }
  if (arch != Architecture::tiny_mlp && widths.empty()) throw ConfigError(to_string(arch) + " needs widths");
  if (arch == Architecture::resnet_like && blocksPerStage < 0) throw ConfigError("blocksPerStage must be >= 0");
}

std::uint64_t ModelSpec::hash() const {
  Fnv1a64 h;
  h.update(to_string(arch));
  h.update_value(input.channels);
  h.update_value(input.height);
  h.update_value(input.width);
  h.update_value(static_cast<std::uint64_t>(widths.size()));
  for (int w : widths) h.update_value(w);
  h.update_value(numClasses);
  if (arch == Architecture::resnet_like) h.update_value(blocksPerStage);
  return h.digest();
}

// Layout helpers ----------------------------------------------------------------

std::vector<std::pair<std::string, std::vector<double>>> unflatten(const ParamVector& p, const ParamLayout& layout) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  out.reserve(layout.size());
  for (const auto& rec : layout) {
    if (rec.offset + rec.size > p.size()) throw ConfigError("parameter vector shorter than layout");
    const double* src = p.values.data() + rec.offset;
    out.emplace_back(rec.name, std::vector<double>(src, src + rec.size));
  }
  return out;
}

ParamVector flatten(const std::vector<std::pair<std::string, std::vector<double>>>& blocks,
                    const ParamLayout& layout) {
  if (blocks.size() != layout.size()) throw ConfigError("block count does not match layout");
  std::size_t total = 0;
  for (const auto& rec : layout) total = std::max(total, rec.offset + rec.size);
  ParamVector p(total);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (blocks[i].first != layout[i].name || blocks[i].second.size() != layout[i].size) {
      throw ConfigError("block '" + blocks[i].first + "' does not match layout record '" + layout[i].name + "'");
    }
    std::copy(blocks[i].second.begin(), blocks[i].second.end(), p.values.data() + layout[i].offset);
  }
  return p;
}

// Network ----------------------------------------------------------------------

Network::Network(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  using namespace detail;
  ImageShape s = spec_.input;
  auto push = [&](std::unique_ptr<Layer> layer) {
    s = layer->output_shape();
    layers_.push_back(std::move(layer));
  };
  switch (spec_.arch) {
    case Architecture::tiny_mlp:
      for (int w : spec_.widths) {
        push(std::make_unique<Dense>(s, w));
        push(std::make_unique<Relu>(s));
      }
      break;
    case Architecture::small_cnn:
      for (int w : spec_.widths) {
        push(std::make_unique<Conv3x3>(s, w));
        push(std::make_unique<Relu>(s));
        if (s.height >= 2 && s.width >= 2) push(std::make_unique<MaxPool2>(s));
      }
      break;
    case Architecture::resnet_like:
      for (std::size_t stage = 0; stage < spec_.widths.size(); ++stage) {
        if (stage > 0 && s.height >= 2 && s.width >= 2) push(std::make_unique<MaxPool2>(s));
        push(std::make_unique<Conv3x3>(s, spec_.widths[stage]));
        push(std::make_unique<Relu>(s));
        for (int b = 0; b < spec_.blocksPerStage; ++b) push(std::make_unique<Residual>(s));
      }
      push(std::make_unique<GlobalAvgPool>(s));
      break;
  }
  push(std::make_unique<Dense>(s, spec_.numClasses));

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    offsets_.push_back(paramCount_);
    layers_[i]->describe("layer" + std::to_string(i), paramCount_, layout_);
    paramCount_ += layers_[i]->param_count();
  }
}

Network::~Network() = default;
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;

ParamVector Network::init_params(std::uint64_t seed) const {
  ParamVector p(paramCount_);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->init(p.values.data() + offsets_[i], rng);
  return p;
}

void Network::check_input(const ParamVector& params, const Tensor& images) const {
  if (params.size() != paramCount_) {
    throw ConfigError("parameter vector has " + std::to_string(params.size()) + " entries, model expects " +
                      std::to_string(paramCount_));
  }
  if (!(images.shape == spec_.input) || images.data.size() != images.per_example() * static_cast<std::size_t>(images.n)) {
    throw ConfigError("input batch does not match model input shape");
  }
}

std::vector<Tensor> Network::forward_all(const ParamVector& params, const Tensor& images) const {
  check_input(params, images);
  std::vector<Tensor> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(images);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Tensor out;
    layers_[i]->forward(acts.back(), params.values.data() + offsets_[i], out);
    acts.push_back(std::move(out));
  }
  return acts;
}

namespace {

Matrix as_matrix(const Tensor& t) {
  return Eigen::Map<const Matrix>(t.data.data(), t.n, static_cast<Eigen::Index>(t.per_example()));
}

Tensor as_tensor(const Matrix& m) {
  Tensor t(static_cast<int>(m.rows()), ImageShape{static_cast<int>(m.cols()), 1, 1});
  Eigen::Map<Matrix>(t.data.data(), m.rows(), m.cols()) = m;
  return t;
}

Matrix log_softmax_rows(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    const double lse = mx + std::log((z.row(i).array() - mx).exp().sum());
    out.row(i) = z.row(i).array() - lse;
  }
  return out;
}

}  // namespace

Matrix Network::forward(const ParamVector& params, const Tensor& images) const {
  return as_matrix(forward_all(params, images).back());
}

ParamVector Network::backward(const ParamVector& params, const std::vector<Tensor>& acts,
                              const Matrix& logitGrad) const {
  ParamVector grad(paramCount_);
  Tensor g = as_tensor(logitGrad);
  for (std::size_t li = layers_.size(); li-- > 0;) {
    Tensor gin;
    const bool needInput = li > 0;
    layers_[li]->backward(acts[li], acts[li + 1], g, params.values.data() + offsets_[li],
                          needInput ? &gin : nullptr, grad.values.data() + offsets_[li]);
    if (needInput) g = std::move(gin);
  }
  return grad;
}

LossAndGrad Network::ce_loss_and_grad(const ParamVector& params, const Tensor& images,
                                      const Matrix& softLabels) const {
  if (softLabels.rows() != images.n || softLabels.cols() != spec_.numClasses) {
    throw ConfigError("soft label matrix does not match batch");
  }
  check_simplex_rows(softLabels);
  const auto acts = forward_all(params, images);
  const Matrix logits = as_matrix(acts.back());
  const Matrix logp = log_softmax_rows(logits);
  const double invB = 1.0 / static_cast<double>(images.n);
  LossAndGrad out;
  out.loss = -(softLabels.array() * logp.array()).sum() * invB;
  const Matrix dz = (logp.array().exp() - softLabels.array()) * invB;
  out.grad = backward(params, acts, dz);
  return out;
}

std::vector<ParamVector> Network::per_class_nll_grads(const ParamVector& params, const Tensor& image) const {
  if (image.n != 1) throw ConfigError("per_class_nll_grads takes a single example");
  const auto acts = forward_all(params, image);
  const Matrix probs = softmax_rows(as_matrix(acts.back()));
  std::vector<ParamVector> out;
  out.reserve(static_cast<std::size_t>(spec_.numClasses));
  for (int c = 0; c < spec_.numClasses; ++c) {
    Matrix dz = probs;
    dz(0, c) -= 1.0;
    out.push_back(backward(params, acts, dz));
  }
  return out;
}

Matrix Network::logits_jvp(const ParamVector& params, const Tensor& images, const ParamVector& direction) const {
  if (direction.size() != paramCount_) throw ConfigError("direction does not match parameter count");
  const auto acts = forward_all(params, images);
  Tensor tangent(images.n, images.shape);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Tensor next;
    layers_[i]->jvp(acts[i], tangent, acts[i + 1], params.values.data() + offsets_[i],
                    direction.values.data() + offsets_[i], next);
    tangent = std::move(next);
  }
  return as_matrix(tangent);
}

// Softmax ------------------------------------------------------------------------

void check_simplex_rows(const Matrix& rows) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double s = rows.row(i).sum();
    if (!(std::abs(s - 1.0) <= 1e-6) || (rows.row(i).array() < 0.0).any()) {
      throw ConfigError("label row " + std::to_string(i) + " is not a probability vector");
    }
  }
}

Matrix softmax_rows(const Matrix& logits) { return log_softmax_rows(logits).array().exp(); }

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp();
  return e / e.sum();
}

// Optimizers -------------------------------------------------------------------------

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd-nesterov";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd-nesterov" || s == "sgd") return OptimizerKind::sgd_nesterov;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

OptimizerState OptimizerState::zeros(OptimizerKind kind, std::size_t n) {
  OptimizerState s;
  s.kind = kind;
  s.first = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (kind == OptimizerKind::adam) s.second = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  return s;
}

std::pair<ParamVector, OptimizerState> optimizer_step(const ParamVector& params, const ParamVector& grad,
                                                      const OptimizerState& state, const OptimizerHyper& hyper) {
  if (params.size() != grad.size() || static_cast<std::size_t>(state.first.size()) != params.size()) {
    throw ConfigError("optimizer shapes disagree");
  }
  if (state.kind != hyper.kind) throw ConfigError("optimizer state kind does not match hyperparameters");
  OptimizerState next = state;
  next.step += 1;
  const Eigen::VectorXd g = grad.values + hyper.weightDecay * params.values;
  ParamVector out = params;
  if (hyper.kind == OptimizerKind::sgd_nesterov) {
    next.first = hyper.momentum * state.first + g;
    out.values -= hyper.lr * (g + hyper.momentum * next.first);
  } else {
    if (static_cast<std::size_t>(state.second.size()) != params.size()) throw ConfigError("adam state missing");
    next.first = hyper.beta1 * state.first + (1.0 - hyper.beta1) * g;
    next.second = hyper.beta2 * state.second + (1.0 - hyper.beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(next.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(next.step));
    out.values.array() -= hyper.lr * (next.first.array() / bc1) / ((next.second.array() / bc2).sqrt() + hyper.eps);
  }
  return {std::move(out), std::move(next)};
}

double LrSchedule::at_epoch(int epoch) const {
  double lr = base;
  for (int m : milestones) {
    if (epoch >= m) lr *= gamma;
  }
  return lr;
}

// Serialization ---------------------------------------------------------------------

namespace {
constexpr char kParamMagic[8] = {'F', 'L', 'I', 'P', 'P', 'R', 'M', '1'};
}

std::string serialize_params(const ParamVector& params, const ModelSpec& spec, StorageType type) {
  std::ostringstream os(std::ios::binary);
  os.write(kParamMagic, sizeof(kParamMagic));
  write_le<std::uint64_t>(os, spec.hash());
  write_le<std::uint64_t>(os, params.size());
  write_le<std::uint8_t>(os, static_cast<std::uint8_t>(type));
  for (Eigen::Index i = 0; i < params.values.size(); ++i) {
    if (type == StorageType::float32) write_le<float>(os, static_cast<float>(params.values[i]));
    else write_le<double>(os, params.values[i]);
  }
  return os.str();
}

ParamVector parse_params(std::span<const char> bytes, const ModelSpec& expected) {
  std::istringstream is(std::string(bytes.data(), bytes.size()), std::ios::binary);
  char magic[sizeof(kParamMagic)];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || !std::equal(magic, magic + sizeof(magic), kParamMagic)) {
    throw ParseError("not a parameter file (bad magic)");
  }
  const auto specHash = read_le<std::uint64_t>(is, "spec hash");
  if (specHash != expected.hash()) {
    throw ParseError("parameter file spec hash " + hex64(specHash) + " does not match model spec hash " +
                     hex64(expected.hash()));
  }
  const auto n = read_le<std::uint64_t>(is, "parameter count");
  const auto type = static_cast<StorageType>(read_le<std::uint8_t>(is, "storage type"));
  if (type != StorageType::float32 && type != StorageType::float64) throw ParseError("unknown storage type");
  ParamVector p(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    p.values[static_cast<Eigen::Index>(i)] =
        type == StorageType::float32 ? static_cast<double>(read_le<float>(is, "parameters")) : read_le<double>(is, "parameters");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes after parameter block");
  return p;
}

}  // namespace flip

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

#ifndef FLIP_SRC_LAYERS_HPP_
#define FLIP_SRC_LAYERS_HPP_

#include <random>
#include <string>

#include "flip/model.hpp"

namespace flip::detail {

/// A differentiable block operating on (N, C, H, W) tensors. `p` points at the
/// layer's own slice of the flat parameter vector.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual ImageShape output_shape() const = 0;
  virtual std::size_t param_count() const { return 0; }
  virtual void describe(const std::string& /*prefix*/, std::size_t /*offset*/, ParamLayout& /*out*/) const {}
  virtual void init(double* /*p*/, std::mt19937_64& /*rng*/) const {}

  virtual void forward(const Tensor& in, const double* p, Tensor& out) const = 0;
  /// Accumulates into `gp`; writes `gin` when non-null.
  virtual void backward(const Tensor& in, const Tensor& out, const Tensor& gout, const double* p, Tensor* gin,
                        double* gp) const = 0;
  /// Tangent of the output for input tangent `din` and parameter tangent `dp`.
  virtual void jvp(const Tensor& in, const Tensor& din, const Tensor& out, const double* p, const double* dp,
                   Tensor& dout) const = 0;
};

class Dense final : public Layer {
 public:
  Dense(ImageShape in, int out) : in_(in), out_(out) {}

  ImageShape output_shape() const override { return {out_, 1, 1}; }
  std::size_t param_count() const override { return static_cast<std::size_t>(out_) * (in_.size() + 1); }
  void describe(const std::string& prefix, std::size_t offset, ParamLayout& out) const override;
  void init(double* p, std::mt19937_64& rng) const override;
  void forward(const Tensor& in, const double* p, Tensor& out) const override;
  void backward(const Tensor& in, const Tensor& out, const Tensor& gout, const double* p, Tensor* gin,
                double* gp) const override;
  void jvp(const Tensor& in, const Tensor& din, const Tensor& out, const double* p, const double* dp,
           Tensor& dout) const override;

 private:
  ImageShape in_;
  int out_;
};

/// 3x3 convolution, stride 1, zero padding 1.
class Conv3x3 final : public Layer {
 public:
  Conv3x3(ImageShape in, int outChannels, double initScale = 1.0)
      : in_(in), cout_(outChannels), initScale_(initScale) {}

  ImageShape output_shape() const override { return {cout_, in_.height, in_.width}; }
  std::size_t param_count() const override {
    return static_cast<std::size_t>(cout_) * (static_cast<std::size_t>(in_.channels) * 9 + 1);
  }
  void describe(const std::string& prefix, std::size_t offset, ParamLayout& out) const override;
  void init(double* p, std::mt19937_64& rng) const override;
  void forward(const Tensor& in, const double* p, Tensor& out) const override;
  void backward(const Tensor& in, const Tensor& out, const Tensor& gout, const double* p, Tensor* gin,
                double* gp) const override;
  void jvp(const Tensor& in, const Tensor& din, const Tensor& out, const double* p, const double* dp,
           Tensor& dout) const override;

 private:
  void im2col(const double* img, double* cols) const;
  void col2im_add(const double* cols, double* img) const;

  ImageShape in_;
  int cout_;
  double initScale_;
};

class Relu final : public Layer {
 public:
  explicit Relu(ImageShape s) : shape_(s) {}
  ImageShape output_shape() const override { return shape_; }
  void forward(const Tensor& in, const double* p, Tensor& out) const override;
  void backward(const Tensor& in, const Tensor& out, const Tensor& gout, const double* p, Tensor* gin,
                double* gp) const override;
  void jvp(const Tensor& in, const Tensor& din, const Tensor& out, const double* p, const double* dp,
           Tensor& dout) const override;

 private:
  ImageShape shape_;
};

/// 2x2 max pooling with stride 2; ties resolve to the first element in scan order.
class MaxPool2 final : public Layer {
 public:
  explicit MaxPool2(ImageShape in) : in_(in) {}
  ImageShape output_shape() const override { return {in_.channels, in_.height / 2, in_.width / 2}; }
  void forward(const Tensor& in, const double* p, Tensor& out) const override;
  void backward(const Tensor& in, const Tensor& out, const Tensor& gout, const double* p, Tensor* gin,
                double* gp) const override;
  void jvp(const Tensor& in, const Tensor& din, const Tensor& out, const double* p, const double* dp,
           Tensor& dout) const override;

 private:
  std::size_t argmax(const double* plane, int r, int c) const;
  ImageShape in_;
};

class GlobalAvgPool final : public Layer {
 public:
  explicit GlobalAvgPool(ImageShape in) : in_(in) {}
  ImageShape output_shape() const override { return {in_.channels, 1, 1}; }
  void forward(const Tensor& in, const double* p, Tensor& out) const override;
  void backward(const Tensor& in, const Tensor& out, const Tensor& gout, const double* p, Tensor* gin,
                double* gp) const override;
  void jvp(const Tensor& in, const Tensor& din, const Tensor& out, const double* p, const double* dp,
           Tensor& dout) const override;

 private:
  ImageShape in_;
};

/// relu(x + conv(relu(conv(x)))) with equal channel counts.
class Residual final : public Layer {
 public:
  explicit Residual(ImageShape s) : shape_(s), first_(s, s.channels), second_(s, s.channels, 0.5) {}

  ImageShape output_shape() const override { return shape_; }
  std::size_t param_count() const override { return first_.param_count() + second_.param_count(); }
  void describe(const std::string& prefix, std::size_t offset, ParamLayout& out) const override;
  void init(double* p, std::mt19937_64& rng) const override;
  void forward(const Tensor& in, const double* p, Tensor& out) const override;
  void backward(const Tensor& in, const Tensor& out, const Tensor& gout, const double* p, Tensor* gin,
                double* gp) const override;
  void jvp(const Tensor& in, const Tensor& din, const Tensor& out, const double* p, const double* dp,
           Tensor& dout) const override;

 private:
  ImageShape shape_;
  Conv3x3 first_;
  Conv3x3 second_;
};

}  // namespace flip::detail

#endif  // FLIP_SRC_LAYERS_HPP_

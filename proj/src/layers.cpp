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

#include "layers.hpp"

#include <cmath>

namespace flip::detail {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using MutVec = Eigen::Map<Eigen::VectorXd>;

void fill_normal(double* p, std::size_t n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::size_t i = 0; i < n; ++i) p[i] = dist(rng);
}

}  // namespace

// Dense ----------------------------------------------------------------------

void Dense::describe(const std::string& prefix, std::size_t offset, ParamLayout& out) const {
  const auto in = static_cast<int>(in_.size());
  out.push_back({prefix + ".weight", {out_, in}, offset, static_cast<std::size_t>(out_) * in_.size()});
  out.push_back({prefix + ".bias", {out_}, offset + static_cast<std::size_t>(out_) * in_.size(),
                 static_cast<std::size_t>(out_)});
}

void Dense::init(double* p, std::mt19937_64& rng) const {
  const std::size_t nw = static_cast<std::size_t>(out_) * in_.size();
  fill_normal(p, nw, std::sqrt(2.0 / static_cast<double>(in_.size())), rng);
  std::fill(p + nw, p + nw + out_, 0.0);
}

void Dense::forward(const Tensor& in, const double* p, Tensor& out) const {
  const auto nin = static_cast<Eigen::Index>(in_.size());
  out = Tensor(in.n, output_shape());
  ConstMap x(in.data.data(), in.n, nin);
  ConstMap w(p, out_, nin);
  ConstVec b(p + out_ * nin, out_);
  MutMap y(out.data.data(), in.n, out_);
  y.noalias() = x * w.transpose();
  y.rowwise() += b.transpose();
}

void Dense::backward(const Tensor& in, const Tensor& /*out*/, const Tensor& gout, const double* p, Tensor* gin,
                     double* gp) const {
  const auto nin = static_cast<Eigen::Index>(in_.size());
  ConstMap x(in.data.data(), in.n, nin);
  ConstMap g(gout.data.data(), in.n, out_);
  MutMap gw(gp, out_, nin);
  MutVec gb(gp + out_ * nin, out_);
  gw.noalias() += g.transpose() * x;
  gb += g.colwise().sum().transpose();
  if (gin != nullptr) {
    *gin = Tensor(in.n, in.shape);
    ConstMap w(p, out_, nin);
    MutMap gx(gin->data.data(), in.n, nin);
    gx.noalias() = g * w;
  }
}

void Dense::jvp(const Tensor& in, const Tensor& din, const Tensor& /*out*/, const double* p, const double* dp,
                Tensor& dout) const {
  const auto nin = static_cast<Eigen::Index>(in_.size());
  dout = Tensor(in.n, output_shape());
  ConstMap x(in.data.data(), in.n, nin);
  ConstMap dx(din.data.data(), in.n, nin);
  ConstMap w(p, out_, nin);
  ConstMap dw(dp, out_, nin);
  ConstVec db(dp + out_ * nin, out_);
  MutMap dy(dout.data.data(), in.n, out_);
  dy.noalias() = dx * w.transpose();
  dy.noalias() += x * dw.transpose();
  dy.rowwise() += db.transpose();
}

// Conv3x3 ----------------------------------------------------------------------

void Conv3x3::describe(const std::string& prefix, std::size_t offset, ParamLayout& out) const {
  const std::size_t nw = static_cast<std::size_t>(cout_) * in_.channels * 9;
  out.push_back({prefix + ".weight", {cout_, in_.channels, 3, 3}, offset, nw});
  out.push_back({prefix + ".bias", {cout_}, offset + nw, static_cast<std::size_t>(cout_)});
}

void Conv3x3::init(double* p, std::mt19937_64& rng) const {
  const std::size_t fanIn = static_cast<std::size_t>(in_.channels) * 9;
  const std::size_t nw = static_cast<std::size_t>(cout_) * fanIn;
  fill_normal(p, nw, initScale_ * std::sqrt(2.0 / static_cast<double>(fanIn)), rng);
  std::fill(p + nw, p + nw + cout_, 0.0);
}

void Conv3x3::im2col(const double* img, double* cols) const {
  const int h = in_.height;
  const int w = in_.width;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < in_.channels; ++c) {
    const double* plane = img + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          double* dst = row + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            dst[x] = (sx < 0 || sx >= w) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

void Conv3x3::col2im_add(const double* cols, double* img) const {
  const int h = in_.height;
  const int w = in_.width;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < in_.channels; ++c) {
    double* plane = img + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const double* src = row + static_cast<std::size_t>(y) * w;
          double* dst = plane + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx >= 0 && sx < w) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

void Conv3x3::forward(const Tensor& in, const double* p, Tensor& out) const {
  const auto k = static_cast<Eigen::Index>(in_.channels) * 9;
  const auto hw = static_cast<Eigen::Index>(in_.height) * in_.width;
  out = Tensor(in.n, output_shape());
  ConstMap w(p, cout_, k);
  ConstVec b(p + cout_ * k, cout_);
  Matrix cols(k, hw);
  for (int i = 0; i < in.n; ++i) {
    im2col(in.example(i), cols.data());
    MutMap y(out.example(i), cout_, hw);
    y.noalias() = w * cols;
    y.colwise() += b;
  }
}

void Conv3x3::backward(const Tensor& in, const Tensor& /*out*/, const Tensor& gout, const double* p, Tensor* gin,
                       double* gp) const {
  const auto k = static_cast<Eigen::Index>(in_.channels) * 9;
  const auto hw = static_cast<Eigen::Index>(in_.height) * in_.width;
  ConstMap w(p, cout_, k);
  MutMap gw(gp, cout_, k);
  MutVec gb(gp + cout_ * k, cout_);
  if (gin != nullptr) *gin = Tensor(in.n, in.shape);
  Matrix cols(k, hw);
  Matrix gcols(k, hw);
  for (int i = 0; i < in.n; ++i) {
    im2col(in.example(i), cols.data());
    ConstMap g(gout.example(i), cout_, hw);
    gw.noalias() += g * cols.transpose();
    gb += g.rowwise().sum();
    if (gin != nullptr) {
      gcols.noalias() = w.transpose() * g;
      col2im_add(gcols.data(), gin->example(i));
    }
  }
}

void Conv3x3::jvp(const Tensor& in, const Tensor& din, const Tensor& /*out*/, const double* p, const double* dp,
                  Tensor& dout) const {
  const auto k = static_cast<Eigen::Index>(in_.channels) * 9;
  const auto hw = static_cast<Eigen::Index>(in_.height) * in_.width;
  dout = Tensor(in.n, output_shape());
  ConstMap w(p, cout_, k);
  ConstMap dw(dp, cout_, k);
  ConstVec db(dp + cout_ * k, cout_);
  Matrix cols(k, hw);
  Matrix dcols(k, hw);
  for (int i = 0; i < in.n; ++i) {
    im2col(in.example(i), cols.data());
    im2col(din.example(i), dcols.data());
    MutMap dy(dout.example(i), cout_, hw);
    dy.noalias() = w * dcols;
    dy.noalias() += dw * cols;
    dy.colwise() += db;
  }
}

// Relu -------------------------------------------------------------------------

void Relu::forward(const Tensor& in, const double* /*p*/, Tensor& out) const {
  out = Tensor(in.n, shape_);
  for (std::size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
}

void Relu::backward(const Tensor& in, const Tensor& /*out*/, const Tensor& gout, const double* /*p*/, Tensor* gin,
                    double* /*gp*/) const {
  if (gin == nullptr) return;
  *gin = Tensor(in.n, shape_);
  for (std::size_t i = 0; i < in.data.size(); ++i) gin->data[i] = in.data[i] > 0.0 ? gout.data[i] : 0.0;
}

void Relu::jvp(const Tensor& in, const Tensor& din, const Tensor& /*out*/, const double* /*p*/,
               const double* /*dp*/, Tensor& dout) const {
  dout = Tensor(in.n, shape_);
  for (std::size_t i = 0; i < in.data.size(); ++i) dout.data[i] = in.data[i] > 0.0 ? din.data[i] : 0.0;
}

// MaxPool2 -------------------------------------------------------------------------

std::size_t MaxPool2::argmax(const double* plane, int r, int c) const {
  const int w = in_.width;
  std::size_t best = static_cast<std::size_t>(2 * r) * w + 2 * c;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const std::size_t idx = static_cast<std::size_t>(2 * r + dy) * w + 2 * c + dx;
      if (plane[idx] > plane[best]) best = idx;
    }
  }
  return best;
}

void MaxPool2::forward(const Tensor& in, const double* /*p*/, Tensor& out) const {
  const ImageShape os = output_shape();
  out = Tensor(in.n, os);
  const std::size_t inPlane = static_cast<std::size_t>(in_.height) * in_.width;
  const std::size_t outPlane = static_cast<std::size_t>(os.height) * os.width;
  for (int i = 0; i < in.n; ++i) {
    for (int c = 0; c < in_.channels; ++c) {
      const double* src = in.example(i) + c * inPlane;
      double* dst = out.example(i) + c * outPlane;
      for (int r = 0; r < os.height; ++r) {
        for (int col = 0; col < os.width; ++col) dst[r * os.width + col] = src[argmax(src, r, col)];
      }
    }
  }
}

void MaxPool2::backward(const Tensor& in, const Tensor& /*out*/, const Tensor& gout, const double* /*p*/,
                        Tensor* gin, double* /*gp*/) const {
  if (gin == nullptr) return;
  const ImageShape os = output_shape();
  *gin = Tensor(in.n, in_);
  const std::size_t inPlane = static_cast<std::size_t>(in_.height) * in_.width;
  const std::size_t outPlane = static_cast<std::size_t>(os.height) * os.width;
  for (int i = 0; i < in.n; ++i) {
    for (int c = 0; c < in_.channels; ++c) {
      const double* src = in.example(i) + c * inPlane;
      const double* g = gout.example(i) + c * outPlane;
      double* dst = gin->example(i) + c * inPlane;
      for (int r = 0; r < os.height; ++r) {
        for (int col = 0; col < os.width; ++col) dst[argmax(src, r, col)] += g[r * os.width + col];
      }
    }
  }
}

void MaxPool2::jvp(const Tensor& in, const Tensor& din, const Tensor& /*out*/, const double* /*p*/,
                   const double* /*dp*/, Tensor& dout) const {
  const ImageShape os = output_shape();
  dout = Tensor(in.n, os);
  const std::size_t inPlane = static_cast<std::size_t>(in_.height) * in_.width;
  const std::size_t outPlane = static_cast<std::size_t>(os.height) * os.width;
  for (int i = 0; i < in.n; ++i) {
    for (int c = 0; c < in_.channels; ++c) {
      const double* src = in.example(i) + c * inPlane;
      const double* d = din.example(i) + c * inPlane;
      double* dst = dout.example(i) + c * outPlane;
      for (int r = 0; r < os.height; ++r) {
        for (int col = 0; col < os.width; ++col) dst[r * os.width + col] = d[argmax(src, r, col)];
      }
    }
  }
}

// GlobalAvgPool ----------------------------------------------------------------

void GlobalAvgPool::forward(const Tensor& in, const double* /*p*/, Tensor& out) const {
  out = Tensor(in.n, output_shape());
  const std::size_t plane = static_cast<std::size_t>(in_.height) * in_.width;
  for (int i = 0; i < in.n; ++i) {
    for (int c = 0; c < in_.channels; ++c) {
      const double* src = in.example(i) + c * plane;
      double s = 0.0;
      for (std::size_t j = 0; j < plane; ++j) s += src[j];
      out.example(i)[c] = s / static_cast<double>(plane);
    }
  }
}

void GlobalAvgPool::backward(const Tensor& in, const Tensor& /*out*/, const Tensor& gout, const double* /*p*/,
                             Tensor* gin, double* /*gp*/) const {
  if (gin == nullptr) return;
  *gin = Tensor(in.n, in_);
  const std::size_t plane = static_cast<std::size_t>(in_.height) * in_.width;
  for (int i = 0; i < in.n; ++i) {
    for (int c = 0; c < in_.channels; ++c) {
      const double g = gout.example(i)[c] / static_cast<double>(plane);
      double* dst = gin->example(i) + c * plane;
      std::fill(dst, dst + plane, g);
    }
  }
}

void GlobalAvgPool::jvp(const Tensor& in, const Tensor& din, const Tensor& out, const double* p,
                        const double* /*dp*/, Tensor& dout) const {
  (void)in;
  (void)out;
  forward(din, p, dout);
}

// Residual ---------------------------------------------------------------------

void Residual::describe(const std::string& prefix, std::size_t offset, ParamLayout& out) const {
  first_.describe(prefix + ".conv1", offset, out);
  second_.describe(prefix + ".conv2", offset + first_.param_count(), out);
}

void Residual::init(double* p, std::mt19937_64& rng) const {
  first_.init(p, rng);
  second_.init(p + first_.param_count(), rng);
}

void Residual::forward(const Tensor& in, const double* p, Tensor& out) const {
  Tensor t1;
  first_.forward(in, p, t1);
  for (double& v : t1.data) v = v > 0.0 ? v : 0.0;
  second_.forward(t1, p + first_.param_count(), out);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double s = out.data[i] + in.data[i];
    out.data[i] = s > 0.0 ? s : 0.0;
  }
}

void Residual::backward(const Tensor& in, const Tensor& out, const Tensor& gout, const double* p, Tensor* gin,
                        double* gp) const {
  Tensor t1;
  first_.forward(in, p, t1);
  Tensor a1 = t1;
  for (double& v : a1.data) v = v > 0.0 ? v : 0.0;

  Tensor gs(gout.n, shape_);
  for (std::size_t i = 0; i < gs.data.size(); ++i) gs.data[i] = out.data[i] > 0.0 ? gout.data[i] : 0.0;

  Tensor ga1;
  second_.backward(a1, Tensor{}, gs, p + first_.param_count(), &ga1, gp + first_.param_count());
  for (std::size_t i = 0; i < ga1.data.size(); ++i) {
    if (!(t1.data[i] > 0.0)) ga1.data[i] = 0.0;
  }
  Tensor gx;
  first_.backward(in, Tensor{}, ga1, p, gin != nullptr ? &gx : nullptr, gp);
  if (gin != nullptr) {
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gs.data[i];
    *gin = std::move(gx);
  }
}

void Residual::jvp(const Tensor& in, const Tensor& din, const Tensor& out, const double* p, const double* dp,
                   Tensor& dout) const {
  Tensor t1;
  first_.forward(in, p, t1);
  Tensor dt1;
  first_.jvp(in, din, t1, p, dp, dt1);
  Tensor a1 = t1;
  for (std::size_t i = 0; i < a1.data.size(); ++i) {
    if (!(t1.data[i] > 0.0)) {
      a1.data[i] = 0.0;
      dt1.data[i] = 0.0;
    }
  }
  second_.jvp(a1, dt1, Tensor{}, p + first_.param_count(), dp + first_.param_count(), dout);
  for (std::size_t i = 0; i < dout.data.size(); ++i) {
    dout.data[i] = out.data[i] > 0.0 ? dout.data[i] + din.data[i] : 0.0;
  }
}

}  // namespace flip::detail

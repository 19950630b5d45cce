// Copyright 2026 The EigenShield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EIGENSHIELD_NN_HPP
#define EIGENSHIELD_NN_HPP

// Small feed-forward networks built from a declarative JSON layer spec, with
// hand-derived backward passes. The gradient contract is exact derivatives;
// the test suite pins every shipped spec against central finite differences.
// Forward and backward are const and allocate their own scratch, so a frozen
// network can be evaluated concurrently.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include <nlohmann/json.hpp>

#include "eigenshield/common.hpp"
#include "eigenshield/image.hpp"
#include "eigenshield/tensorio.hpp"

namespace eigenshield {

/// Dense c x h x w activation block. Dense layers use c=h=1.
struct Tensor {
  int c = 1, h = 1, w = 1;
  Vec data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), data(Vec::Zero(static_cast<Eigen::Index>(c_) * h_ * w_)) {}

  Eigen::Index size() const { return data.size(); }
  double& at(int ch, int y, int x) {
    return data[(static_cast<Eigen::Index>(ch) * h + y) * w + x];
  }
  double at(int ch, int y, int x) const {
    return data[(static_cast<Eigen::Index>(ch) * h + y) * w + x];
  }

  static Tensor from_image(const Image& im) {
    Tensor t(1, im.rows, im.cols);
    t.data = im.flatten();
    return t;
  }

  Image to_image() const {
    return Image::from_flat(data, c == 1 ? h : c * h, w);
  }
};

struct TensorShape {
  int c = 1, h = 1, w = 1;
  Eigen::Index count() const { return static_cast<Eigen::Index>(c) * h * w; }
  bool operator==(const TensorShape&) const = default;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual TensorShape out_shape() const = 0;

  virtual Tensor forward(const Tensor& in) const = 0;

  /// Computes the gradient with respect to the layer input given the saved
  /// forward input and the upstream gradient. When param_grads is non-null
  /// it must hold one vector per parameter array (same order as params())
  /// and receives accumulated gradients.
  virtual Tensor backward(const Tensor& in, const Tensor& grad_out,
                          std::vector<Vec>* param_grads) const = 0;

  virtual std::vector<Vec*> params() { return {}; }
  virtual std::vector<const Vec*> params() const { return {}; }
};

namespace layers {

class Dense final : public Layer {
 public:
  Dense(int in, int out, uint64_t seed) : in_(in), out_(out) {
    weight_ = Vec::Zero(static_cast<Eigen::Index>(in) * out);
    bias_ = Vec::Zero(out);
    Rng rng(seed);
    const double scale = std::sqrt(2.0 / in);
    for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_[i] = scale * rng.normal();
  }

  std::string kind() const override { return "dense"; }
  TensorShape out_shape() const override { return {1, 1, out_}; }

  Tensor forward(const Tensor& in) const override {
    Tensor out(1, 1, out_);
    out.data = wmat() * in.data + bias_;
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor& grad_out,
                  std::vector<Vec>* param_grads) const override {
    if (param_grads) {
      auto& pg = *param_grads;
      Eigen::Map<Mat> dw(pg[0].data(), out_, in_);
      dw.noalias() += grad_out.data * in.data.transpose();
      pg[1] += grad_out.data;
    }
    Tensor gin(in.c, in.h, in.w);
    gin.data = wmat().transpose() * grad_out.data;
    return gin;
  }

  std::vector<Vec*> params() override { return {&weight_, &bias_}; }
  std::vector<const Vec*> params() const override { return {&weight_, &bias_}; }

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }

 private:
  Eigen::Map<const Mat> wmat() const { return {weight_.data(), out_, in_}; }

  int in_, out_;
  Vec weight_;  // row-major out x in, stored column-major as out x in map
  Vec bias_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(TensorShape in, int out_ch, int kernel, int stride, int pad, uint64_t seed)
      : in_(in), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad) {
    require(kernel >= 1 && stride >= 1 && pad >= 0, "conv: bad geometry");
    oh_ = (in.h + 2 * pad - kernel) / stride + 1;
    ow_ = (in.w + 2 * pad - kernel) / stride + 1;
    require(oh_ >= 1 && ow_ >= 1, "conv: output collapses to zero size");
    const Eigen::Index fan_in = static_cast<Eigen::Index>(in.c) * kernel * kernel;
    weight_ = Vec::Zero(out_ch * fan_in);
    bias_ = Vec::Zero(out_ch);
    Rng rng(seed);
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_[i] = scale * rng.normal();
  }

  std::string kind() const override { return "conv"; }
  TensorShape out_shape() const override { return {out_ch_, oh_, ow_}; }

  Tensor forward(const Tensor& in) const override {
    Mat col = im2col(in);
    Tensor out(out_ch_, oh_, ow_);
    Eigen::Map<Mat> omat(out.data.data(), static_cast<Eigen::Index>(oh_) * ow_, out_ch_);
    omat.noalias() = col.transpose() * wmat();
    omat.rowwise() += bias_.transpose();
    return rechunk(out);
  }

  Tensor backward(const Tensor& in, const Tensor& grad_out,
                  std::vector<Vec>* param_grads) const override {
    // grad_out arrives channel-major; convert to the (pixels x channels)
    // layout used by the GEMM formulation.
    Mat gmat(static_cast<Eigen::Index>(oh_) * ow_, out_ch_);
    for (int ch = 0; ch < out_ch_; ++ch)
      for (int p = 0; p < oh_ * ow_; ++p)
        gmat(p, ch) = grad_out.data[static_cast<Eigen::Index>(ch) * oh_ * ow_ + p];

    Mat col = im2col(in);
    if (param_grads) {
      auto& pg = *param_grads;
      Eigen::Map<Mat> dw(pg[0].data(), col.rows(), out_ch_);
      dw.noalias() += col * gmat;
      pg[1] += gmat.colwise().sum().transpose();
    }
    Mat dcol = wmat() * gmat.transpose();  // (fan_in) x (pixels)
    return col2im(dcol);
  }

  std::vector<Vec*> params() override { return {&weight_, &bias_}; }
  std::vector<const Vec*> params() const override { return {&weight_, &bias_}; }

 private:
  // weight viewed as (in_c*k*k) x out_ch
  Eigen::Map<const Mat> wmat() const {
    return {weight_.data(), static_cast<Eigen::Index>(in_.c) * k_ * k_, out_ch_};
  }

  Mat im2col(const Tensor& in) const {
    Mat col = Mat::Zero(static_cast<Eigen::Index>(in_.c) * k_ * k_,
                        static_cast<Eigen::Index>(oh_) * ow_);
    for (int ch = 0; ch < in_.c; ++ch)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          Eigen::Index row = (static_cast<Eigen::Index>(ch) * k_ + ky) * k_ + kx;
          for (int oy = 0; oy < oh_; ++oy) {
            int iy = oy * stride_ + ky - pad_;
            if (iy < 0 || iy >= in_.h) continue;
            for (int ox = 0; ox < ow_; ++ox) {
              int ix = ox * stride_ + kx - pad_;
              if (ix < 0 || ix >= in_.w) continue;
              col(row, static_cast<Eigen::Index>(oy) * ow_ + ox) = in.at(ch, iy, ix);
            }
          }
        }
    return col;
  }

  Tensor col2im(const Mat& dcol) const {
    Tensor gin(in_.c, in_.h, in_.w);
    for (int ch = 0; ch < in_.c; ++ch)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          Eigen::Index row = (static_cast<Eigen::Index>(ch) * k_ + ky) * k_ + kx;
          for (int oy = 0; oy < oh_; ++oy) {
            int iy = oy * stride_ + ky - pad_;
            if (iy < 0 || iy >= in_.h) continue;
            for (int ox = 0; ox < ow_; ++ox) {
              int ix = ox * stride_ + kx - pad_;
              if (ix < 0 || ix >= in_.w) continue;
              gin.at(ch, iy, ix) += dcol(row, static_cast<Eigen::Index>(oy) * ow_ + ox);
            }
          }
        }
    return gin;
  }

  // GEMM output is (pixels x channels); store channel-major.
  Tensor rechunk(Tensor& out) const {
    Tensor res(out_ch_, oh_, ow_);
    Eigen::Map<Mat> omat(out.data.data(), static_cast<Eigen::Index>(oh_) * ow_, out_ch_);
    for (int ch = 0; ch < out_ch_; ++ch)
      for (int p = 0; p < oh_ * ow_; ++p)
        res.data[static_cast<Eigen::Index>(ch) * oh_ * ow_ + p] = omat(p, ch);
    return res;
  }

  TensorShape in_;
  int out_ch_, k_, stride_, pad_;
  int oh_, ow_;
  Vec weight_;
  Vec bias_;
};

class ReLU final : public Layer {
 public:
  explicit ReLU(TensorShape s) : shape_(s) {}
  std::string kind() const override { return "relu"; }
  TensorShape out_shape() const override { return shape_; }

  Tensor forward(const Tensor& in) const override {
    Tensor out = in;
    out.data = in.data.cwiseMax(0.0);
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor& grad_out, std::vector<Vec>*) const override {
    Tensor gin = grad_out;
    for (Eigen::Index i = 0; i < gin.data.size(); ++i)
      if (in.data[i] <= 0.0) gin.data[i] = 0.0;
    return gin;
  }

 private:
  TensorShape shape_;
};

class Tanh final : public Layer {
 public:
  explicit Tanh(TensorShape s) : shape_(s) {}
  std::string kind() const override { return "tanh"; }
  TensorShape out_shape() const override { return shape_; }

  Tensor forward(const Tensor& in) const override {
    Tensor out = in;
    out.data = in.data.array().tanh();
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor& grad_out, std::vector<Vec>*) const override {
    Tensor gin = grad_out;
    Eigen::ArrayXd t = in.data.array().tanh();
    gin.data.array() *= (1.0 - t * t);
    return gin;
  }

 private:
  TensorShape shape_;
};

class AvgPool2d final : public Layer {
 public:
  AvgPool2d(TensorShape in, int k) : in_(in), k_(k) {
    require(k >= 1 && in.h % k == 0 && in.w % k == 0,
            "avgpool: input dims must be divisible by the window");
  }
  std::string kind() const override { return "avgpool"; }
  TensorShape out_shape() const override { return {in_.c, in_.h / k_, in_.w / k_}; }

  Tensor forward(const Tensor& in) const override {
    auto s = out_shape();
    Tensor out(s.c, s.h, s.w);
    const double inv = 1.0 / (k_ * k_);
    for (int ch = 0; ch < s.c; ++ch)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double acc = 0;
          for (int dy = 0; dy < k_; ++dy)
            for (int dx = 0; dx < k_; ++dx) acc += in.at(ch, y * k_ + dy, x * k_ + dx);
          out.at(ch, y, x) = acc * inv;
        }
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor& grad_out, std::vector<Vec>*) const override {
    auto s = out_shape();
    Tensor gin(in.c, in.h, in.w);
    const double inv = 1.0 / (k_ * k_);
    for (int ch = 0; ch < s.c; ++ch)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double g = grad_out.at(ch, y, x) * inv;
          for (int dy = 0; dy < k_; ++dy)
            for (int dx = 0; dx < k_; ++dx) gin.at(ch, y * k_ + dy, x * k_ + dx) += g;
        }
    return gin;
  }

 private:
  TensorShape in_;
  int k_;
};

class Flatten final : public Layer {
 public:
  explicit Flatten(TensorShape in) : in_(in) {}
  std::string kind() const override { return "flatten"; }
  TensorShape out_shape() const override { return {1, 1, static_cast<int>(in_.count())}; }

  Tensor forward(const Tensor& in) const override {
    Tensor out(1, 1, static_cast<int>(in.size()));
    out.data = in.data;
    return out;
  }

  Tensor backward(const Tensor& in, const Tensor& grad_out, std::vector<Vec>*) const override {
    Tensor gin(in.c, in.h, in.w);
    gin.data = grad_out.data;
    return gin;
  }

 private:
  TensorShape in_;
};

}  // namespace layers

/// Per-layer parameter gradients, shaped like the network's parameters.
struct NetGrads {
  std::vector<std::vector<Vec>> by_layer;

  void add_scaled(const NetGrads& other, double s) {
    for (size_t l = 0; l < by_layer.size(); ++l)
      for (size_t p = 0; p < by_layer[l].size(); ++p) by_layer[l][p] += s * other.by_layer[l][p];
  }

  void scale(double s) {
    for (auto& lay : by_layer)
      for (auto& v : lay) v *= s;
  }
};

struct NetTrace {
  std::vector<Tensor> inputs;  // input to each layer
  Tensor output;
};

class Network {
 public:
  Network() = default;

  /// Builds a network from a JSON spec:
  ///   {"input": {"channels":1,"height":64,"width":64},
  ///    "layers": [{"type":"conv","out_channels":8,"kernel":3,"stride":2,"pad":1},
  ///               {"type":"relu"}, ..., {"type":"dense","out":64}]}
  /// Initialization is deterministic under seed.
  static Network from_spec(const json& spec, uint64_t seed) {
    Network net;
    net.spec_ = spec;
    const auto& in = spec.at("input");
    TensorShape shape{in.value("channels", 1), in.at("height").get<int>(),
                      in.at("width").get<int>()};
    net.in_shape_ = shape;
    int index = 0;
    for (const auto& l : spec.at("layers")) {
      const std::string type = l.at("type").get<std::string>();
      uint64_t lseed = derive_seed(seed, "layer-init", static_cast<uint64_t>(index));
      std::unique_ptr<Layer> layer;
      if (type == "conv") {
        layer = std::make_unique<layers::Conv2d>(shape, l.at("out_channels").get<int>(),
                                                 l.at("kernel").get<int>(),
                                                 l.value("stride", 1), l.value("pad", 0), lseed);
      } else if (type == "dense") {
        require(shape.c == 1 && shape.h == 1, "dense layer needs flattened input");
        layer = std::make_unique<layers::Dense>(shape.w, l.at("out").get<int>(), lseed);
      } else if (type == "relu") {
        layer = std::make_unique<layers::ReLU>(shape);
      } else if (type == "tanh") {
        layer = std::make_unique<layers::Tanh>(shape);
      } else if (type == "avgpool") {
        layer = std::make_unique<layers::AvgPool2d>(shape, l.at("kernel").get<int>());
      } else if (type == "flatten") {
        layer = std::make_unique<layers::Flatten>(shape);
      } else {
        throw ValidationError("unknown layer type '" + type + "' in network spec");
      }
      shape = layer->out_shape();
      net.layers_.push_back(std::move(layer));
      ++index;
    }
    net.out_shape_ = shape;
    return net;
  }

  const json& spec() const { return spec_; }
  TensorShape in_shape() const { return in_shape_; }
  TensorShape out_shape() const { return out_shape_; }
  int out_dim() const { return static_cast<int>(out_shape_.count()); }
  size_t layer_count() const { return layers_.size(); }

  Tensor forward(const Tensor& in) const {
    check_input(in);
    Tensor x = in;
    for (size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i]->forward(x);
      check_finite(x, i);
    }
    return x;
  }

  Tensor forward(const Tensor& in, NetTrace& trace) const {
    check_input(in);
    trace.inputs.clear();
    trace.inputs.reserve(layers_.size());
    Tensor x = in;
    for (size_t i = 0; i < layers_.size(); ++i) {
      trace.inputs.push_back(x);
      x = layers_[i]->forward(x);
      check_finite(x, i);
    }
    trace.output = x;
    return x;
  }

  /// Backpropagates grad_out through the traced forward pass. Returns the
  /// gradient with respect to the input; when grads is non-null, parameter
  /// gradients are accumulated into it.
  Tensor backward(const NetTrace& trace, const Tensor& grad_out, NetGrads* grads) const {
    require(trace.inputs.size() == layers_.size(), "backward: trace/network mismatch");
    Tensor g = grad_out;
    for (size_t i = layers_.size(); i-- > 0;) {
      std::vector<Vec>* pg = grads ? &grads->by_layer[i] : nullptr;
      g = layers_[i]->backward(trace.inputs[i], g, pg);
      if (!g.data.allFinite())
        throw Error("non-finite gradient at layer " + std::to_string(i) + " (" +
                    layers_[i]->kind() + ")");
    }
    return g;
  }

  NetGrads zero_grads() const {
    NetGrads g;
    g.by_layer.resize(layers_.size());
    for (size_t i = 0; i < layers_.size(); ++i) {
      auto ps = layers_[i]->params();
      for (auto* p : ps) g.by_layer[i].push_back(Vec::Zero(p->size()));
    }
    return g;
  }

  // -- flat parameter vector interface ---------------------------------------

  Eigen::Index param_size() const {
    Eigen::Index n = 0;
    for (const auto& l : layers_)
      for (auto* p : std::as_const(*l).params()) n += p->size();
    return n;
  }

  Vec param_vector() const {
    Vec out(param_size());
    Eigen::Index off = 0;
    for (const auto& l : layers_)
      for (auto* p : std::as_const(*l).params()) {
        out.segment(off, p->size()) = *p;
        off += p->size();
      }
    return out;
  }

  void set_param_vector(const Vec& v) {
    require(v.size() == param_size(), "set_param_vector: size mismatch");
    Eigen::Index off = 0;
    for (auto& l : layers_)
      for (auto* p : l->params()) {
        *p = v.segment(off, p->size());
        off += p->size();
      }
  }

  Vec grads_to_vector(const NetGrads& g) const {
    Vec out(param_size());
    Eigen::Index off = 0;
    for (size_t i = 0; i < layers_.size(); ++i)
      for (const auto& p : g.by_layer[i]) {
        out.segment(off, p.size()) = p;
        off += p.size();
      }
    return out;
  }

  /// Structural copy with identical parameters.
  Network clone() const {
    Network net = from_spec(spec_, 0);
    net.set_param_vector(param_vector());
    return net;
  }

 private:
  void check_input(const Tensor& in) const {
    if (!(TensorShape{in.c, in.h, in.w} == in_shape_))
      throw ValidationError("network input shape mismatch: got " + std::to_string(in.c) + "x" +
                            std::to_string(in.h) + "x" + std::to_string(in.w) + ", want " +
                            std::to_string(in_shape_.c) + "x" + std::to_string(in_shape_.h) +
                            "x" + std::to_string(in_shape_.w));
  }

  void check_finite(const Tensor& x, size_t i) const {
    if (!x.data.allFinite())
      throw Error("non-finite output at layer " + std::to_string(i) + " (" +
                  layers_[i]->kind() + ")");
  }

  json spec_;
  TensorShape in_shape_;
  TensorShape out_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// ---------------------------------------------------------------------------
// Selection head: one affine map followed by a componentwise logistic, with
// outputs clipped to [eps, 1-eps] so Bernoulli log-likelihoods stay finite.
// ---------------------------------------------------------------------------

class SelectionHead {
 public:
  static constexpr double kClip = 1e-7;

  SelectionHead() = default;
  SelectionHead(int in_dim, int out_dim, uint64_t seed) : in_(in_dim), out_(out_dim) {
    weight_ = Vec::Zero(static_cast<Eigen::Index>(in_dim) * out_dim);
    bias_ = Vec::Zero(out_dim);
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_[i] = scale * rng.normal();
  }

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }

  Vec logits(const Vec& f_hat) const {
    require(f_hat.size() == in_, "selection head: input dim mismatch");
    return wmat() * f_hat + bias_;
  }

  static Vec squash(const Vec& z) {
    Vec f(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-z[i]));
      f[i] = std::min(1.0 - kClip, std::max(kClip, s));
    }
    return f;
  }

  Vec probabilities(const Vec& f_hat) const { return squash(logits(f_hat)); }

  /// Backward from a gradient with respect to the logits. Returns the
  /// gradient with respect to the input; accumulates parameter gradients
  /// into (dweight, dbias) when provided.
  Vec backward_from_logits(const Vec& f_hat, const Vec& grad_z, Vec* dweight, Vec* dbias) const {
    if (dweight) {
      Eigen::Map<Mat> dw(dweight->data(), out_, in_);
      dw.noalias() += grad_z * f_hat.transpose();
    }
    if (dbias) *dbias += grad_z;
    return wmat().transpose() * grad_z;
  }

  Vec& weight() { return weight_; }
  Vec& bias() { return bias_; }
  const Vec& weight() const { return weight_; }
  const Vec& bias() const { return bias_; }

  Eigen::Index param_size() const { return weight_.size() + bias_.size(); }

  Vec param_vector() const {
    Vec v(param_size());
    v << weight_, bias_;
    return v;
  }

  void set_param_vector(const Vec& v) {
    require(v.size() == param_size(), "selection head: param vector size mismatch");
    weight_ = v.head(weight_.size());
    bias_ = v.tail(bias_.size());
  }

 private:
  Eigen::Map<const Mat> wmat() const { return {weight_.data(), out_, in_}; }

  int in_ = 0, out_ = 0;
  Vec weight_;
  Vec bias_;
};

inline double sigmoid_derivative_from_logit(double z) {
  double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 - s);
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_NN_HPP

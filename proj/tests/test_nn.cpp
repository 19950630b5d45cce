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

#include <catch2/catch_amalgamated.hpp>

#include "eigenshield/config.hpp"
#include "eigenshield/nn.hpp"
#include "testutil.hpp"

using namespace eigenshield;

namespace {

json tiny_conv_spec(int h, int w, int out) {
  json spec;
  spec["input"] = {{"channels", 1}, {"height", h}, {"width", w}};
  spec["layers"] = json::array({
      json{{"type", "conv"}, {"out_channels", 3}, {"kernel", 3}, {"stride", 2}, {"pad", 1}},
      json{{"type", "relu"}},
      json{{"type", "conv"}, {"out_channels", 4}, {"kernel", 3}, {"stride", 1}, {"pad", 1}},
      json{{"type", "tanh"}},
      json{{"type", "avgpool"}, {"kernel", 2}},
      json{{"type", "flatten"}},
      json{{"type", "dense"}, {"out", out}},
  });
  return spec;
}

/// Scalar probe objective: dot(c, net(x)).
struct Probe {
  const Network& net;
  Vec c;

  double operator()(const Tensor& in) const { return c.dot(net.forward(in).data); }

  Tensor grad_out() const {
    Tensor g(net.out_shape().c, net.out_shape().h, net.out_shape().w);
    g.data = c;
    return g;
  }
};

void check_param_gradients(const Network& net_const, const Tensor& input, int probes,
                           double tol) {
  Network net = net_const.clone();
  Rng rng(99);
  Vec c(net.out_dim());
  for (int i = 0; i < net.out_dim(); ++i) c[i] = rng.normal();

  NetTrace trace;
  net.forward(input, trace);
  NetGrads grads = net.zero_grads();
  Tensor gout(net.out_shape().c, net.out_shape().h, net.out_shape().w);
  gout.data = c;
  net.backward(trace, gout, &grads);
  Vec exact = net.grads_to_vector(grads);

  Vec params = net.param_vector();
  for (int p = 0; p < probes; ++p) {
    Eigen::Index i = static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(params.size())));
    double fd = testutil::central_difference(
        [&]() {
          net.set_param_vector(params);
          return c.dot(net.forward(input).data);
        },
        params, i, 1e-4);
    net.set_param_vector(params);
    double denom = std::max({std::abs(fd), std::abs(exact[i]), 1e-6});
    REQUIRE(std::abs(fd - exact[i]) / denom < tol);
  }
}

void check_input_gradients(const Network& net, const Tensor& input, int probes, double tol) {
  Rng rng(7);
  Vec c(net.out_dim());
  for (int i = 0; i < net.out_dim(); ++i) c[i] = rng.normal();

  NetTrace trace;
  net.forward(input, trace);
  Tensor gout(net.out_shape().c, net.out_shape().h, net.out_shape().w);
  gout.data = c;
  Tensor exact = net.backward(trace, gout, nullptr);

  Tensor probe = input;
  for (int p = 0; p < probes; ++p) {
    Eigen::Index i =
        static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(probe.data.size())));
    double fd = testutil::central_difference(
        [&]() { return c.dot(net.forward(probe).data); }, probe.data, i, 1e-4);
    double denom = std::max({std::abs(fd), std::abs(exact.data[i]), 1e-6});
    REQUIRE(std::abs(fd - exact.data[i]) / denom < tol);
  }
}

}  // namespace

TEST_CASE("zero input through a zero-initialized dense layer gives zero output") {
  json spec;
  spec["input"] = {{"channels", 1}, {"height", 1}, {"width", 4}};
  spec["layers"] = json::array({json{{"type", "dense"}, {"out", 3}}});
  Network net = Network::from_spec(spec, 1);
  Vec zeroed = Vec::Zero(net.param_size());
  net.set_param_vector(zeroed);  // zero weights and bias

  Tensor in(1, 1, 4);
  REQUIRE(net.forward(in).data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward is deterministic under fixed parameters and input") {
  Network net = Network::from_spec(tiny_conv_spec(8, 8, 5), 42);
  Tensor in = Tensor::from_image(testutil::random_image(8, 8, 3));
  Vec a = net.forward(in).data;
  Vec b = net.forward(in).data;
  REQUIRE(a == b);

  // identical seed -> identical initialization
  Network net2 = Network::from_spec(tiny_conv_spec(8, 8, 5), 42);
  REQUIRE(net.param_vector() == net2.param_vector());
}

TEST_CASE("one affine layer on a 2-pixel image matches manual arithmetic") {
  json spec;
  spec["input"] = {{"channels", 1}, {"height", 1}, {"width", 2}};
  spec["layers"] = json::array({json{{"type", "dense"}, {"out", 2}}});
  Network net = Network::from_spec(spec, 0);
  // weight map is column-major (out x in): v = [w00 w10 w01 w11 b0 b1]
  Vec v(6);
  v << 1.0, -2.0, 3.0, 0.5, 0.25, -1.0;
  net.set_param_vector(v);

  Tensor in(1, 1, 2);
  in.data << 2.0, -1.0;
  Vec out = net.forward(in).data;
  // y0 = 1*2 + 3*(-1) + 0.25 = -0.75 ; y1 = -2*2 + 0.5*(-1) - 1 = -5.5
  REQUIRE(out[0] == Catch::Approx(-0.75));
  REQUIRE(out[1] == Catch::Approx(-5.5));
}

TEST_CASE("selection head: zero params, saturation, and hand-set weights") {
  SelectionHead zero_head(3, 4, 1);
  zero_head.weight().setZero();
  zero_head.bias().setZero();
  Vec f = zero_head.probabilities(Vec::Zero(3));
  for (int i = 0; i < 4; ++i) REQUIRE(f[i] == Catch::Approx(0.5));

  SelectionHead sat(3, 4, 1);
  sat.weight().setZero();
  sat.bias().setConstant(100.0);
  Vec fs = sat.probabilities(Vec::Zero(3));
  for (int i = 0; i < 4; ++i) REQUIRE(fs[i] == Catch::Approx(1.0 - 1e-7));

  // hand-set 2x2: z = W f + b
  SelectionHead head(2, 2, 1);
  Vec params(6);
  params << 1.0, -1.0, 0.5, 2.0, 0.1, -0.2;  // column-major W, then bias
  head.set_param_vector(params);
  Vec in(2);
  in << 0.3, -0.6;
  Vec z = head.logits(in);
  REQUIRE(z[0] == Catch::Approx(1.0 * 0.3 + 0.5 * (-0.6) + 0.1));
  REQUIRE(z[1] == Catch::Approx(-1.0 * 0.3 + 2.0 * (-0.6) - 0.2));
  Vec p = head.probabilities(in);
  REQUIRE(p[0] == Catch::Approx(1.0 / (1.0 + std::exp(-z[0]))));
  REQUIRE(p[1] == Catch::Approx(1.0 / (1.0 + std::exp(-z[1]))));

  REQUIRE_THROWS_AS(head.logits(Vec::Zero(3)), ValidationError);
}

TEST_CASE("constant objective gives zero parameter gradients") {
  Network net = Network::from_spec(tiny_conv_spec(8, 8, 4), 5);
  Tensor in = Tensor::from_image(testutil::random_image(8, 8, 11));
  NetTrace trace;
  net.forward(in, trace);
  NetGrads grads = net.zero_grads();
  Tensor gout(1, 1, 4);  // objective independent of outputs
  net.backward(trace, gout, &grads);
  REQUIRE(net.grads_to_vector(grads).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single affine layer with quadratic objective matches the closed form") {
  json spec;
  spec["input"] = {{"channels", 1}, {"height", 1}, {"width", 3}};
  spec["layers"] = json::array({json{{"type", "dense"}, {"out", 2}}});
  Network net = Network::from_spec(spec, 3);

  Tensor in(1, 1, 3);
  in.data << 0.5, -1.0, 2.0;
  // objective L = 0.5 |y|^2 -> dL/dy = y; dW = y x^T, db = y (column-major)
  NetTrace trace;
  Vec y = net.forward(in, trace).data;
  NetGrads grads = net.zero_grads();
  Tensor gout(1, 1, 2);
  gout.data = y;
  net.backward(trace, gout, &grads);
  Vec g = net.grads_to_vector(grads);

  // closed form, column-major weight layout then bias
  Eigen::Index idx = 0;
  for (int col = 0; col < 3; ++col)
    for (int row = 0; row < 2; ++row) REQUIRE(g[idx++] == Catch::Approx(y[row] * in.data[col]));
  REQUIRE(g[idx++] == Catch::Approx(y[0]));
  REQUIRE(g[idx++] == Catch::Approx(y[1]));
}

TEST_CASE("objective independent of input gives zero input gradient; linear case is exact") {
  Network net = Network::from_spec(tiny_conv_spec(8, 8, 4), 9);
  Tensor in = Tensor::from_image(testutil::random_image(8, 8, 2));
  NetTrace trace;
  net.forward(in, trace);
  Tensor gout(1, 1, 4);
  Tensor gin = net.backward(trace, gout, nullptr);
  REQUIRE(gin.data.cwiseAbs().maxCoeff() == 0.0);

  // identity "network" via a dense layer: objective <c, Wx>, gradient W^T c
  json spec;
  spec["input"] = {{"channels", 1}, {"height", 1}, {"width", 5}};
  spec["layers"] = json::array({json{{"type", "dense"}, {"out", 5}}});
  Network lin = Network::from_spec(spec, 12);
  Tensor x(1, 1, 5);
  x.data << 1, 2, 3, 4, 5;
  Rng rng(4);
  Vec c(5);
  for (int i = 0; i < 5; ++i) c[i] = rng.normal();
  NetTrace lt;
  lin.forward(x, lt);
  Tensor lc(1, 1, 5);
  lc.data = c;
  Tensor lg = lin.backward(lt, lc, nullptr);
  // gradient of <c, Wx + b> wrt x is W^T c, independent of x
  Tensor x2(1, 1, 5);
  NetTrace lt2;
  lin.forward(x2, lt2);
  Tensor lg2 = lin.backward(lt2, lc, nullptr);
  REQUIRE((lg.data - lg2.data).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("finite-difference sweep over every parameter of a tiny net") {
  Network net = Network::from_spec(tiny_conv_spec(8, 8, 3), 21);
  Tensor in = Tensor::from_image(testutil::random_image(8, 8, 8));
  check_param_gradients(net, in, static_cast<int>(net.param_size()), 1e-3);
  check_input_gradients(net, in, 32, 1e-3);
}

TEST_CASE("every shipped architecture spec passes gradient checks") {
  auto dir = testutil::source_dir() / "configs";
  int specs_seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    json spec = load_json_file(entry.path());
    Network net = Network::from_spec(spec, 1234);
    Tensor in(net.in_shape().c, net.in_shape().h, net.in_shape().w);
    Rng rng(fnv1a64(entry.path().filename().string()));
    for (Eigen::Index i = 0; i < in.data.size(); ++i) in.data[i] = rng.uniform();
    check_param_gradients(net, in, 8, 1e-3);
    check_input_gradients(net, in, 8, 1e-3);
    ++specs_seen;
  }
  REQUIRE(specs_seen >= 4);
}

TEST_CASE("non-finite intermediates raise an error naming the layer") {
  Network net = Network::from_spec(tiny_conv_spec(8, 8, 4), 2);
  Vec params = net.param_vector();
  params[0] = std::numeric_limits<double>::infinity();
  net.set_param_vector(params);
  Tensor in = Tensor::from_image(testutil::random_image(8, 8, 1));
  try {
    net.forward(in);
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("layer 0") != std::string::npos);
    REQUIRE(std::string(e.what()).find("conv") != std::string::npos);
  }
}

TEST_CASE("network parameters round-trip through the container format") {
  testutil::TempDir tmp("nn-ckpt");
  Network net = Network::from_spec(tiny_conv_spec(8, 8, 4), 77);
  TensorContainer c;
  c.add("params", net.param_vector(), "f8");
  c.meta()["arch"] = net.spec();
  c.save(tmp.path() / "net");

  TensorContainer loaded = TensorContainer::load(tmp.path() / "net");
  Network back = Network::from_spec(loaded.meta()["arch"], 0);
  back.set_param_vector(loaded.vector("params"));
  REQUIRE(back.param_vector() == net.param_vector());

  Tensor in = Tensor::from_image(testutil::random_image(8, 8, 15));
  REQUIRE(back.forward(in).data == net.forward(in).data);
}

TEST_CASE("max-norm clip keeps selection probabilities inside the open interval") {
  SelectionHead head(2, 3, 5);
  head.bias().setConstant(-500.0);
  Vec p = head.probabilities(Vec::Zero(2));
  REQUIRE(p.minCoeff() >= SelectionHead::kClip);
  head.bias().setConstant(500.0);
  p = head.probabilities(Vec::Zero(2));
  REQUIRE(p.maxCoeff() <= 1.0 - SelectionHead::kClip);
}

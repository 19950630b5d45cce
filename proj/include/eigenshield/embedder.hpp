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

#ifndef EIGENSHIELD_EMBEDDER_HPP
#define EIGENSHIELD_EMBEDDER_HPP

// The protected recognition model F: a pluggable interface mapping images to
// feature vectors compared by cosine, plus a small trainable convolutional
// embedder so the full pipeline runs at desk scale. F is frozen during
// defense training and evaluation; param_hash() lets callers assert that.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "eigenshield/common.hpp"
#include "eigenshield/eval_scores.hpp"
#include "eigenshield/image.hpp"
#include "eigenshield/nn.hpp"
#include "eigenshield/tensorio.hpp"

namespace eigenshield {

class EmbeddingModel {
 public:
  virtual ~EmbeddingModel() = default;

  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual int input_rows() const = 0;
  virtual int input_cols() const = 0;

  /// Deterministic feature vector.
  virtual Vec embed(const Image& image) const = 0;

  /// Gradient of a scalar with respect to the input pixels, given the
  /// gradient with respect to the embedding.
  virtual Image embed_input_gradient(const Image& image, const Vec& grad_embedding) const = 0;

  /// Hash over the parameters; constant while the model is frozen.
  virtual uint64_t param_hash() const = 0;
};

class ToyConvEmbedder final : public EmbeddingModel {
 public:
  ToyConvEmbedder() = default;
  ToyConvEmbedder(const json& arch_spec, uint64_t seed, std::string name = "toy-conv")
      : net_(Network::from_spec(arch_spec, seed)), name_(std::move(name)) {}

  std::string name() const override { return name_; }
  int dim() const override { return net_.out_dim(); }
  int input_rows() const override { return net_.in_shape().h; }
  int input_cols() const override { return net_.in_shape().w; }

  Vec embed(const Image& image) const override {
    return net_.forward(Tensor::from_image(image)).data;
  }

  Image embed_input_gradient(const Image& image, const Vec& grad_embedding) const override {
    NetTrace trace;
    net_.forward(Tensor::from_image(image), trace);
    Tensor g(1, 1, static_cast<int>(grad_embedding.size()));
    g.data = grad_embedding;
    g.c = net_.out_shape().c;
    g.h = net_.out_shape().h;
    g.w = net_.out_shape().w;
    Tensor gin = net_.backward(trace, g, nullptr);
    return gin.to_image();
  }

  uint64_t param_hash() const override {
    Vec p = net_.param_vector();
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(p.data()),
                                    static_cast<size_t>(p.size()) * sizeof(double)));
  }

  Network& network() { return net_; }
  const Network& network() const { return net_; }

  void save(const std::filesystem::path& dir) const {
    TensorContainer c;
    c.add("params", net_.param_vector(), "f4");
    c.meta()["kind"] = "embedder";
    c.meta()["name"] = name_;
    c.meta()["arch"] = net_.spec();
    c.save(dir);
  }

  static ToyConvEmbedder load(const std::filesystem::path& dir) {
    TensorContainer c = TensorContainer::load(dir);
    if (c.meta().value("kind", "") != "embedder")
      throw ValidationError("not an embedder checkpoint: " + dir.string());
    ToyConvEmbedder e(c.meta()["arch"], 0, c.meta().value("name", "toy-conv"));
    e.net_.set_param_vector(c.vector("params"));
    return e;
  }

 private:
  Network net_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// Training of the toy embedder: cosine-margin softmax classification over the
// training identities, stopping once clean verification EER on held-out
// pairs reaches the target.
// ---------------------------------------------------------------------------

struct EmbedderTrainConfig {
  json arch;                 // network spec; output dim = embedding dim
  double scale = 16.0;       // logit scale s
  double margin = 0.2;       // additive cosine margin on the true class
  double lr = 0.05;
  double momentum = 0.9;
  int batch_size = 16;
  int max_steps = 4000;
  int eval_every = 250;
  int holdout_per_identity = 2;  // images per identity reserved for validation
  int val_pos_pairs = 200;
  int val_neg_pairs = 200;
  double eer_target = 0.05;
  uint64_t seed = 7;
};

struct EmbedderTrainReport {
  double best_eer = 1.0;
  double final_eer = 1.0;
  int steps_run = 0;
  std::vector<std::pair<int, double>> eer_curve;  // (step, holdout EER)
};

namespace detail {

struct MarginHead {
  Mat weights;  // n_classes x d_f
  double scale;
  double margin;

  /// Cross-entropy over margin-adjusted cosine logits. Returns loss;
  /// fills gradients for the embedding and (accumulates) class weights.
  double loss_and_grads(const Vec& z, int label, Vec& dz, Mat& dw) const {
    const int n_cls = static_cast<int>(weights.rows());
    Vec cos_all(n_cls);
    for (int j = 0; j < n_cls; ++j) cos_all[j] = cosine(z, weights.row(j).transpose());
    Vec logits = scale * cos_all;
    logits[label] -= scale * margin;

    double mx = logits.maxCoeff();
    Vec p = (logits.array() - mx).exp();
    p /= p.sum();
    double loss = -std::log(std::max(p[label], 1e-300));

    dz = Vec::Zero(z.size());
    for (int j = 0; j < n_cls; ++j) {
      double dlogit = p[j] - (j == label ? 1.0 : 0.0);
      double dcos = scale * dlogit;
      dz += dcos * cosine_grad_u(z, weights.row(j).transpose());
      dw.row(j) += dcos * cosine_grad_u(weights.row(j).transpose(), z).transpose();
    }
    return loss;
  }
};

}  // namespace detail

/// Trains a toy embedder until its clean verification EER on held-out pairs
/// reaches cfg.eer_target. Throws if the budget runs out, reporting the best
/// EER achieved. Deterministic under cfg.seed.
inline ToyConvEmbedder train_toy_embedder(const std::vector<Image>& corpus,
                                          const EmbedderTrainConfig& cfg,
                                          EmbedderTrainReport* report = nullptr) {
  // Identity bookkeeping.
  std::vector<std::string> identities;
  std::unordered_map<std::string, int> id_index;
  for (const auto& im : corpus)
    if (id_index.emplace(im.identity, static_cast<int>(identities.size())).second)
      identities.push_back(im.identity);
  require(identities.size() >= 2, "train_toy_embedder: needs >=2 identities");

  // Holdout split: the last holdout_per_identity images of each identity (in
  // corpus order) become validation-only.
  std::unordered_map<std::string, int> seen_count;
  std::unordered_map<std::string, int> total_count;
  for (const auto& im : corpus) total_count[im.identity]++;
  std::vector<int> train_idx;
  std::vector<Image> holdout;
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& im = corpus[i];
    int pos = seen_count[im.identity]++;
    int reserved = std::min(cfg.holdout_per_identity, total_count[im.identity] - 1);
    if (pos >= total_count[im.identity] - reserved)
      holdout.push_back(im);
    else
      train_idx.push_back(static_cast<int>(i));
  }
  require(!train_idx.empty(), "train_toy_embedder: no training images after holdout split");

  ToyConvEmbedder embedder(cfg.arch, derive_seed(cfg.seed, "embedder-init"));
  Network& net = embedder.network();
  const int d_f = net.out_dim();

  detail::MarginHead head;
  head.scale = cfg.scale;
  head.margin = cfg.margin;
  head.weights.resize(static_cast<Eigen::Index>(identities.size()), d_f);
  {
    Rng rng(derive_seed(cfg.seed, "margin-head-init"));
    for (Eigen::Index i = 0; i < head.weights.rows(); ++i) {
      for (int j = 0; j < d_f; ++j) head.weights(i, j) = rng.normal();
      head.weights.row(i) /= head.weights.row(i).norm();
    }
  }

  PairProtocol val_pairs =
      build_pairs(holdout, cfg.val_pos_pairs, cfg.val_neg_pairs, derive_seed(cfg.seed, "val"));

  auto holdout_eer = [&]() {
    std::vector<Vec> embs(holdout.size());
    for (size_t i = 0; i < holdout.size(); ++i) embs[i] = embedder.embed(holdout[i]);
    ScoreSet scores;
    for (const auto& p : val_pairs.positives)
      scores.positives.push_back(cosine(embs[static_cast<size_t>(p.a)],
                                        embs[static_cast<size_t>(p.b)]));
    for (const auto& p : val_pairs.negatives)
      scores.negatives.push_back(cosine(embs[static_cast<size_t>(p.a)],
                                        embs[static_cast<size_t>(p.b)]));
    return compute_eer(scores).eer;
  };

  Vec vel_net = Vec::Zero(net.param_size());
  Mat vel_head = Mat::Zero(head.weights.rows(), head.weights.cols());

  EmbedderTrainReport rep;
  bool reached = false;

  for (int step = 0; step < cfg.max_steps && !reached; ++step) {
    Rng rng(derive_seed(cfg.seed, "embedder-batch", static_cast<uint64_t>(step)));
    NetGrads grads = net.zero_grads();
    Mat dw = Mat::Zero(head.weights.rows(), head.weights.cols());
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Image& im = corpus[static_cast<size_t>(train_idx[rng.below(train_idx.size())])];
      int label = id_index[im.identity];
      NetTrace trace;
      Vec z = net.forward(Tensor::from_image(im), trace).data;
      Vec dz;
      head.loss_and_grads(z, label, dz, dw);
      Tensor g(1, 1, d_f);
      g.data = dz;
      g.c = net.out_shape().c;
      g.h = net.out_shape().h;
      g.w = net.out_shape().w;
      net.backward(trace, g, &grads);
    }
    const double inv_b = 1.0 / cfg.batch_size;
    vel_net = cfg.momentum * vel_net + inv_b * net.grads_to_vector(grads);
    net.set_param_vector(net.param_vector() - cfg.lr * vel_net);
    vel_head = cfg.momentum * vel_head + inv_b * dw;
    head.weights -= cfg.lr * vel_head;

    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.max_steps) {
      double eer = holdout_eer();
      rep.eer_curve.emplace_back(step + 1, eer);
      rep.best_eer = std::min(rep.best_eer, eer);
      rep.final_eer = eer;
      rep.steps_run = step + 1;
      if (eer <= cfg.eer_target) reached = true;
    }
  }

  if (report) *report = rep;
  if (!reached)
    throw Error("train_toy_embedder: EER target " + std::to_string(cfg.eer_target) +
                " unreached within " + std::to_string(cfg.max_steps) +
                " steps; best EER " + std::to_string(rep.best_eer));
  return embedder;
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_EMBEDDER_HPP

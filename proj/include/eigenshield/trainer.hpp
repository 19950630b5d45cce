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

#ifndef EIGENSHIELD_TRAINER_HPP
#define EIGENSHIELD_TRAINER_HPP

// Clonal-selection training loop. Per sample: clone k antibodies from the
// selection probabilities, score each by affinity against the clean image,
// and push the parameters along the baseline-weighted score-function
// direction
//     theta <- theta - (phi/k) sum_i (s0 - s(a_i)) grad_theta log l(a_i)
// routed through a classical momentum accumulator and accumulated over the
// batch. Two phases: warm-up on clean inputs, then self-supervised
// adversarial training on FGSM samples crafted against the momentum siamese
// copy. Training is bit-reproducible and resumable: every random draw is
// derived from (seed, step), and checkpoints carry the full mutable state in
// f8 precision.

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "eigenshield/antibody.hpp"
#include "eigenshield/attacks.hpp"
#include "eigenshield/common.hpp"
#include "eigenshield/defense.hpp"
#include "eigenshield/eigenbasis.hpp"
#include "eigenshield/embedder.hpp"
#include "eigenshield/image.hpp"
#include "eigenshield/tensorio.hpp"

namespace eigenshield {

struct TrainerConfig {
  int k = 10;                 // clones per sample
  double phi = 0.01;          // learning rate
  double momentum = 0.9;
  int batch_size = 4;
  int warmup_steps = 2000;
  int adversarial_steps = 10000;
  double eta = 0.04;          // FGSM scale for self-supervised samples
  double xi = 0.999;          // siamese EMA decay
  double epsilon = 0.999;     // memory moving-average decay
  AffinityConfig affinity;
  uint64_t seed = 1;

  void validate() const {
    require(k >= 1, "trainer: k must be >= 1");
    require(phi > 0.0, "trainer: phi must be positive");
    require(batch_size >= 1, "trainer: batch_size must be >= 1");
    require(warmup_steps >= 0 && adversarial_steps >= 0, "trainer: step counts must be >= 0");
    require(eta >= 0.0, "trainer: eta must be >= 0");
    require(xi > 0.0 && xi < 1.0, "trainer: xi must lie in (0,1)");
    require(epsilon > 0.0 && epsilon < 1.0, "trainer: epsilon must lie in (0,1)");
    require(affinity.lambda1 >= 0 && affinity.lambda2 >= 0 && affinity.lambda3 >= 0,
            "trainer: affinity weights must be non-negative");
  }

  int total_steps() const { return warmup_steps + adversarial_steps; }

  json to_json() const {
    json j;
    j["k"] = k;
    j["phi"] = phi;
    j["momentum"] = momentum;
    j["batch_size"] = batch_size;
    j["warmup_steps"] = warmup_steps;
    j["adversarial_steps"] = adversarial_steps;
    j["eta"] = eta;
    j["xi"] = xi;
    j["epsilon"] = epsilon;
    j["lambda1"] = affinity.lambda1;
    j["lambda2"] = affinity.lambda2;
    j["lambda3"] = affinity.lambda3;
    j["seed"] = seed;
    return j;
  }

  static TrainerConfig from_json(const json& j) {
    TrainerConfig c;
    c.k = j.value("k", c.k);
    c.phi = j.value("phi", c.phi);
    c.momentum = j.value("momentum", c.momentum);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.adversarial_steps = j.value("adversarial_steps", c.adversarial_steps);
    c.eta = j.value("eta", c.eta);
    c.xi = j.value("xi", c.xi);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.affinity.lambda1 = j.value("lambda1", c.affinity.lambda1);
    c.affinity.lambda2 = j.value("lambda2", c.affinity.lambda2);
    c.affinity.lambda3 = j.value("lambda3", c.affinity.lambda3);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

struct TrainLogRecord {
  int64_t step = 0;
  Phase phase = Phase::warmup;
  double mean_affinity = 0.0;      // s0 averaged over the batch
  double mean_cardinality = 0.0;   // mean |a| over all clones in the batch
  double p_mutation = 0.0;         // mean mutation probability over the batch
  double specificity_v = std::numeric_limits<double>::quiet_NaN();  // batch MAP antibodies
  double loss = 0.0;               // siamese loss L(x) (adversarial phase)

  json to_json() const {
    json j;
    j["step"] = step;
    j["phase"] = phase_name(phase);
    j["s0"] = mean_affinity;
    j["mean_a"] = mean_cardinality;
    j["p_mutation"] = p_mutation;
    if (std::isnan(specificity_v))
      j["v"] = nullptr;
    else
      j["v"] = specificity_v;
    j["loss"] = loss;
    return j;
  }
};

/// Cloning-by-sampling: k independent Bernoulli draws from f_e.
inline std::vector<Antibody> clone_antibodies(const Vec& f_e, int k, uint64_t seed) {
  require(k >= 1, "clone_antibodies: k must be >= 1");
  std::vector<Antibody> clones;
  clones.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i)
    clones.push_back(Antibody::sample(f_e, derive_seed(seed, "clone", static_cast<uint64_t>(i))));
  return clones;
}

/// Factorized Bernoulli log-likelihood of an antibody under f_e. The
/// clipping of f_e keeps every term finite.
inline double log_likelihood(const Antibody& antibody, const Vec& f_e) {
  require(antibody.size() == static_cast<int>(f_e.size()),
          "log_likelihood: dimension mismatch");
  double acc = 0.0;
  for (int i = 0; i < antibody.size(); ++i)
    acc += antibody.test(i) ? std::log(f_e[i]) : std::log(1.0 - f_e[i]);
  return acc;
}

/// Injectable affinity for tests; the default evaluates the standard
/// affinity of (reconstruction, clean image, antibody).
using AffinityFn = std::function<double(const Antibody&, const Image& x_recon,
                                        const Image& x_clean)>;

class ClonalTrainer {
 public:
  ClonalTrainer(DefenseState state, const EigenBasis& basis, const EmbeddingModel& embedder,
                TrainerConfig cfg)
      : state_(std::move(state)),
        basis_(basis),
        embedder_(embedder),
        cfg_(cfg),
        siamese_(SiameseState::init(state_, cfg.xi)),
        velocity_(Vec::Zero(state_.param_size())) {
    cfg_.validate();
    require(basis_.d_e() == state_.cfg.d_e, "trainer: basis/defense d_e mismatch");
    require(basis_.content_id() == state_.basis_id, "trainer: defense bound to a different basis");
    state_.bank.epsilon = cfg_.epsilon;
    siamese_.model.bank.epsilon = cfg_.epsilon;
    embedder_hash_ = embedder.param_hash();
  }

  const DefenseState& state() const { return state_; }
  const SiameseState& siamese() const { return siamese_; }
  const TrainerConfig& config() const { return cfg_; }
  int64_t step() const { return state_.step; }

  void set_affinity_override(AffinityFn fn) { affinity_override_ = std::move(fn); }

  Phase phase_at(int64_t step) const {
    return step < cfg_.warmup_steps ? Phase::warmup : Phase::adversarial;
  }

  /// One optimizer step over a batch of clean images (Algorithm-1 loop per
  /// sample, one parameter application per batch).
  TrainLogRecord train_step(const std::vector<const Image*>& batch) {
    require(!batch.empty(), "train_step: empty batch");
    const int64_t step = state_.step;
    const Phase phase = phase_at(step);
    state_.phase = phase;

    DefenseGrads grads = DefenseGrads::zero(state_);
    TrainLogRecord rec;
    rec.step = step;
    rec.phase = phase;

    std::vector<Antibody> batch_map_antibodies;
    double loss_sum = 0.0;
    int clone_count = 0;

    for (size_t b = 0; b < batch.size(); ++b) {
      const Image& x_clean = *batch[b];
      const uint64_t sample_tag =
          static_cast<uint64_t>(step) * static_cast<uint64_t>(cfg_.batch_size) + b;

      // (1) input: clean in warm-up, siamese-FGSM sample afterwards
      Image x_input = x_clean;
      if (phase == Phase::adversarial && cfg_.eta > 0.0) {
        AttackObjective obj = objective_siamese(embedder_, siamese_.model, basis_);
        loss_sum += obj.loss(x_clean);
        x_input = generate_adversarial_fgsm(x_clean, obj.grad(x_clean), cfg_.eta);
      }

      // (2) forward to selection probabilities
      SelectionTrace trace;
      Vec f_e = selection_probabilities(state_, x_input, &trace);

      // (3) cloning and mutation by sampling
      std::vector<Antibody> clones =
          clone_antibodies(f_e, cfg_.k, derive_seed(cfg_.seed, "sample", sample_tag));

      // (4) affinities against the clean image
      Vec alpha = basis_.project_full(x_input.flatten());
      Vec affinities(cfg_.k);
      for (int i = 0; i < cfg_.k; ++i) {
        Vec masked = alpha.cwiseProduct(clones[static_cast<size_t>(i)].as_weights());
        Image recon = Image::from_flat(basis_.synthesize(masked), basis_.rows, basis_.cols);
        affinities[i] = affinity_override_
                            ? affinity_override_(clones[static_cast<size_t>(i)], recon, x_clean)
                            : affinity(recon, x_clean, clones[static_cast<size_t>(i)],
                                       embedder_, cfg_.affinity);
      }
      if (!affinities.allFinite()) throw Error("train_step: non-finite affinity");

      // (5) baseline
      const double s0 = affinities.mean();

      // (6) score-function gradient through the head logits:
      //     d log l(a) / d z = a - f_e
      Vec grad_z = Vec::Zero(f_e.size());
      for (int i = 0; i < cfg_.k; ++i) {
        const double w = s0 - affinities[i];
        if (w == 0.0) continue;
        grad_z += w * (clones[static_cast<size_t>(i)].as_weights() - f_e);
      }
      grad_z /= static_cast<double>(cfg_.k);
      selection_backward_from_logits(state_, trace, grad_z, &grads);

      // (7) memory write with this sample's noise feature
      if (state_.cfg.memory_enabled) memory_update(state_.bank, trace.f_n);

      // diagnostics
      rec.mean_affinity += s0;
      for (const auto& a : clones) {
        rec.mean_cardinality += a.cardinality();
        ++clone_count;
      }
      rec.p_mutation += mutation_probability(f_e);
      batch_map_antibodies.push_back(Antibody::from_probabilities(f_e));
    }

    // one optimizer application per batch (batch-mean gradient)
    Vec g = grads.to_vector(state_) / static_cast<double>(batch.size());
    if (!g.allFinite()) throw Error("train_step: non-finite batch gradient");
    velocity_ = cfg_.momentum * velocity_ + g;
    state_.set_param_vector(state_.param_vector() - cfg_.phi * velocity_);

    // (8) siamese EMA, once per sample as in the per-image loop
    for (size_t b = 0; b < batch.size(); ++b) siamese_update(siamese_, state_);

    state_.step = step + 1;

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    rec.mean_affinity *= inv_b;
    rec.p_mutation *= inv_b;
    rec.mean_cardinality /= static_cast<double>(clone_count);
    rec.loss = phase == Phase::adversarial ? loss_sum * inv_b : 0.0;
    if (batch_map_antibodies.size() >= 2)
      rec.specificity_v = specificity_v(batch_map_antibodies);
    return rec;
  }

  struct RunOptions {
    std::filesystem::path checkpoint_dir;  // empty = no checkpoints
    int checkpoint_interval = 0;           // steps; 0 = only final
    std::function<void(const TrainLogRecord&)> on_record;
  };

  std::vector<TrainLogRecord> run(const std::vector<Image>& corpus) {
    return run(corpus, RunOptions());
  }

  /// Runs the configured schedule from the current step to the end. Batches
  /// are drawn uniformly (with replacement) from the corpus, derived from
  /// (seed, step) so a resumed run replays the identical stream.
  std::vector<TrainLogRecord> run(const std::vector<Image>& corpus,
                                  const RunOptions& options) {
    require(!corpus.empty(), "run: empty corpus");
    require(embedder_.param_hash() == embedder_hash_,
            "run: embedder parameters changed during training (must stay frozen)");
    std::vector<TrainLogRecord> log;
    const int64_t total = cfg_.total_steps();
    for (int64_t s = state_.step; s < total; ++s) {
      Rng rng(derive_seed(cfg_.seed, "batch", static_cast<uint64_t>(s)));
      std::vector<const Image*> batch;
      batch.reserve(static_cast<size_t>(cfg_.batch_size));
      for (int b = 0; b < cfg_.batch_size; ++b)
        batch.push_back(&corpus[rng.below(corpus.size())]);
      TrainLogRecord rec = train_step(batch);
      if (options.on_record) options.on_record(rec);
      log.push_back(rec);
      if (!options.checkpoint_dir.empty() && options.checkpoint_interval > 0 &&
          state_.step % options.checkpoint_interval == 0 && state_.step < total)
        save_checkpoint(options.checkpoint_dir);
    }
    if (!options.checkpoint_dir.empty()) save_checkpoint(options.checkpoint_dir);
    require(embedder_.param_hash() == embedder_hash_,
            "run: embedder parameters changed during training (must stay frozen)");
    return log;
  }

  /// Full mutable training state (defense + siamese + momentum) in f8, so a
  /// resumed run is bit-identical to an uninterrupted one.
  void save_checkpoint(const std::filesystem::path& dir) const {
    TensorContainer c;
    defense_to_container(state_, c, "");
    defense_to_container(siamese_.model, c, "siamese_");
    c.add("velocity", velocity_, "f8");
    c.meta()["kind"] = "defense-trainer";
    defense_meta(state_, c.meta());
    c.meta()["trainer"] = cfg_.to_json();
    c.save(dir);
  }

  static ClonalTrainer from_checkpoint(const std::filesystem::path& dir,
                                       const EigenBasis& basis,
                                       const EmbeddingModel& embedder) {
    TensorContainer c = TensorContainer::load(dir);
    if (c.meta().value("kind", "") != "defense-trainer")
      throw ValidationError("not a trainer checkpoint: " + dir.string());
    DefenseState state = defense_from_container(c, c.meta(), "");
    TrainerConfig cfg = TrainerConfig::from_json(c.meta()["trainer"]);
    ClonalTrainer trainer(std::move(state), basis, embedder, cfg);
    trainer.siamese_.model = defense_from_container(c, c.meta(), "siamese_");
    trainer.siamese_.model.bank.epsilon = cfg.epsilon;
    trainer.velocity_ = c.vector("velocity");
    return trainer;
  }

 private:
  DefenseState state_;
  const EigenBasis& basis_;
  const EmbeddingModel& embedder_;
  TrainerConfig cfg_;
  SiameseState siamese_;
  Vec velocity_;
  uint64_t embedder_hash_ = 0;
  AffinityFn affinity_override_;
};

}  // namespace eigenshield

#endif  // EIGENSHIELD_TRAINER_HPP

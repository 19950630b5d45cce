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

#ifndef EIGENSHIELD_DEFENSE_HPP
#define EIGENSHIELD_DEFENSE_HPP

// The defense model D: analyzer -> memory read -> selection head ->
// eigenvector-subset reconstruction, with three inference modes:
//   map     deterministic antibody, selection probabilities thresholded at 0.5
//   sampled per-index Bernoulli draw under an explicit seed
//   soft    continuous relaxation weighting each component by its probability;
//           differentiable, and identical to map at 0/1 vertices
// plus the momentum (EMA) siamese copy used to generate training-time
// adversarial samples.

#include <filesystem>
#include <optional>
#include <string>

#include "eigenshield/antibody.hpp"
#include "eigenshield/common.hpp"
#include "eigenshield/eigenbasis.hpp"
#include "eigenshield/image.hpp"
#include "eigenshield/memory.hpp"
#include "eigenshield/nn.hpp"
#include "eigenshield/tensorio.hpp"

namespace eigenshield {

enum class Phase { warmup, adversarial };

inline std::string phase_name(Phase p) { return p == Phase::warmup ? "warmup" : "adversarial"; }

struct DefenseConfig {
  int d_n = 64;   // analyzer output / memory item / head input dim
  int d_m = 32;   // memory items
  int d_e = 256;  // eigenvector selection space (basis d_e)
  double memory_epsilon = 0.999;
  bool memory_enabled = true;     // ablation switch: bypass the bank entirely
  bool softmax_read = false;      // alternative read-weight normalization
  bool ema_includes_memory = true;
};

struct DefenseState {
  Network analyzer;
  SelectionHead head;
  MemoryBank bank;
  DefenseConfig cfg;
  Phase phase = Phase::warmup;
  int64_t step = 0;
  uint32_t basis_id = 0;  // content id of the bound eigenbasis

  static DefenseState init(const json& analyzer_spec, const DefenseConfig& cfg,
                           uint32_t basis_id, uint64_t seed) {
    DefenseState s;
    s.cfg = cfg;
    s.analyzer = Network::from_spec(analyzer_spec, derive_seed(seed, "analyzer"));
    require(s.analyzer.out_dim() == cfg.d_n,
            "defense: analyzer output dim " + std::to_string(s.analyzer.out_dim()) +
                " != configured d_n " + std::to_string(cfg.d_n));
    s.head = SelectionHead(cfg.d_n, cfg.d_e, derive_seed(seed, "head"));
    s.bank = MemoryBank::init(cfg.d_m, cfg.d_n, cfg.memory_epsilon, seed);
    s.basis_id = basis_id;
    return s;
  }

  /// Trainable parameters (analyzer then head) as one flat vector. The
  /// memory bank is not gradient-trained; it updates by moving average.
  Eigen::Index param_size() const { return analyzer.param_size() + head.param_size(); }

  Vec param_vector() const {
    Vec v(param_size());
    v << analyzer.param_vector(), head.param_vector();
    return v;
  }

  void set_param_vector(const Vec& v) {
    require(v.size() == param_size(), "defense: param vector size mismatch");
    analyzer.set_param_vector(v.head(analyzer.param_size()));
    head.set_param_vector(v.tail(head.param_size()));
  }

  DefenseState clone() const {
    DefenseState s;
    s.analyzer = analyzer.clone();
    s.head = head;
    s.bank = bank;
    s.cfg = cfg;
    s.phase = phase;
    s.step = step;
    s.basis_id = basis_id;
    return s;
  }
};

// ---------------------------------------------------------------------------
// Forward pass to selection probabilities, with enough saved state for the
// training and soft-mode backward passes.
// ---------------------------------------------------------------------------

struct SelectionTrace {
  NetTrace analyzer;
  Vec f_n;      // analyzer output (noise feature)
  MemoryReadTrace read;
  Vec f_hat;    // memory-aggregated feature (or f_n when memory is bypassed)
  Vec logits;   // head logits z
  Vec f_e;      // clipped sigmoid(z)
};

inline Vec selection_probabilities(const DefenseState& state, const Image& image,
                                   SelectionTrace* trace = nullptr) {
  SelectionTrace local;
  SelectionTrace& t = trace ? *trace : local;
  t.f_n = state.analyzer.forward(Tensor::from_image(image), t.analyzer).data;
  if (state.cfg.memory_enabled)
    t.f_hat = memory_read(state.bank, t.f_n, state.cfg.softmax_read, &t.read);
  else
    t.f_hat = t.f_n;
  t.logits = state.head.logits(t.f_hat);
  t.f_e = SelectionHead::squash(t.logits);
  return t.f_e;
}

/// Backpropagates a gradient with respect to the head logits down to the
/// analyzer input. Accumulates parameter gradients (analyzer ordering first,
/// then head) into grads when provided.
struct DefenseGrads {
  NetGrads analyzer;
  Vec head_weight;
  Vec head_bias;

  static DefenseGrads zero(const DefenseState& s) {
    DefenseGrads g;
    g.analyzer = s.analyzer.zero_grads();
    g.head_weight = Vec::Zero(s.head.weight().size());
    g.head_bias = Vec::Zero(s.head.bias().size());
    return g;
  }

  Vec to_vector(const DefenseState& s) const {
    Vec v(s.param_size());
    v << s.analyzer.grads_to_vector(analyzer), head_weight, head_bias;
    return v;
  }
};

inline Image selection_backward_from_logits(const DefenseState& state,
                                            const SelectionTrace& trace, const Vec& grad_z,
                                            DefenseGrads* grads) {
  Vec grad_fhat = state.head.backward_from_logits(
      trace.f_hat, grad_z, grads ? &grads->head_weight : nullptr,
      grads ? &grads->head_bias : nullptr);
  Vec grad_fn;
  if (state.cfg.memory_enabled)
    grad_fn = memory_read_backward(state.bank, trace.f_n, trace.read, grad_fhat);
  else
    grad_fn = grad_fhat;
  Tensor g(1, 1, static_cast<int>(grad_fn.size()));
  g.data = grad_fn;
  g.c = state.analyzer.out_shape().c;
  g.h = state.analyzer.out_shape().h;
  g.w = state.analyzer.out_shape().w;
  Tensor gin = state.analyzer.backward(trace.analyzer, g, grads ? &grads->analyzer : nullptr);
  return gin.to_image();
}

// ---------------------------------------------------------------------------
// Inference.
// ---------------------------------------------------------------------------

enum class DefendMode { map, sampled, soft };

struct DefendResult {
  Image reconstructed;            // unclamped
  std::optional<Antibody> antibody;  // map/sampled modes
  Vec f_e;                        // selection probabilities
  bool degenerate = false;        // empty antibody
};

/// Runs the defense on one image. map and soft are deterministic given a
/// state snapshot; sampled is deterministic given (snapshot, seed).
inline DefendResult defend(const DefenseState& state, const EigenBasis& basis,
                           const Image& image, DefendMode mode, uint64_t seed = 0) {
  require(basis.d_e() == state.cfg.d_e, "defend: basis/defense d_e mismatch");
  DefendResult res;
  res.f_e = selection_probabilities(state, image);

  Vec alpha = basis.project_full(image.flatten());
  Vec weights;
  if (mode == DefendMode::soft) {
    weights = res.f_e;
  } else {
    Antibody a = (mode == DefendMode::map) ? Antibody::from_probabilities(res.f_e)
                                           : Antibody::sample(res.f_e, seed);
    res.degenerate = a.is_empty();
    weights = a.as_weights();
    res.antibody = std::move(a);
  }
  Vec flat = basis.synthesize(alpha.cwiseProduct(weights));
  res.reconstructed = Image::from_flat(flat, basis.rows, basis.cols, image.id);
  res.reconstructed.identity = image.identity;
  return res;
}

// ---------------------------------------------------------------------------
// Differentiable soft mode. Input gradients include both the direct linear
// path through the projection and the indirect path through the selection
// probabilities (the analyzer sees the same pixels).
// ---------------------------------------------------------------------------

struct SoftDefendTrace {
  SelectionTrace selection;
  Vec alpha;  // full-basis coefficients of the input
};

inline Image soft_defend_forward(const DefenseState& state, const EigenBasis& basis,
                                 const Image& image, SoftDefendTrace& trace) {
  require(basis.d_e() == state.cfg.d_e, "defend: basis/defense d_e mismatch");
  selection_probabilities(state, image, &trace.selection);
  trace.alpha = basis.project_full(image.flatten());
  Vec flat = basis.synthesize(trace.alpha.cwiseProduct(trace.selection.f_e));
  Image out = Image::from_flat(flat, basis.rows, basis.cols, image.id);
  out.identity = image.identity;
  return out;
}

/// Gradient of a scalar with respect to the input image, given its gradient
/// with respect to the soft reconstruction. Also accumulates parameter
/// gradients when grads is non-null.
inline Image soft_defend_backward(const DefenseState& state, const EigenBasis& basis,
                                  const SoftDefendTrace& trace, const Image& grad_recon,
                                  DefenseGrads* grads = nullptr) {
  Vec g = grad_recon.flatten();
  Vec q = basis.vectors.transpose() * g;  // d_e

  // Direct path: d recon / d input = E diag(f_e) E^T.
  Vec grad_flat = basis.vectors * q.cwiseProduct(trace.selection.f_e);

  // Indirect path through f_e: dL/df_e = alpha .* q, then through the
  // (unclipped) sigmoid to the logits and down the selection stack.
  Vec grad_fe = trace.alpha.cwiseProduct(q);
  Vec grad_z(grad_fe.size());
  for (Eigen::Index i = 0; i < grad_z.size(); ++i)
    grad_z[i] = grad_fe[i] * sigmoid_derivative_from_logit(trace.selection.logits[i]);
  Image analyzer_grad =
      selection_backward_from_logits(state, trace.selection, grad_z, grads);

  Image out = Image::from_flat(grad_flat + analyzer_grad.flatten(), basis.rows, basis.cols);
  return out;
}

// ---------------------------------------------------------------------------
// Momentum siamese copy.
// ---------------------------------------------------------------------------

struct SiameseState {
  DefenseState model;
  double xi = 0.999;  // EMA decay

  static SiameseState init(const DefenseState& source, double xi) {
    require(xi >= 0.0 && xi < 1.0, "siamese: xi must lie in [0,1)");
    SiameseState s;
    s.model = source.clone();
    s.xi = xi;
    return s;
  }
};

/// EMA blend of every trainable parameter; the memory bank follows the same
/// rule when cfg.ema_includes_memory, otherwise it mirrors the source bank.
inline void siamese_update(SiameseState& siamese, const DefenseState& source) {
  require(siamese.model.param_size() == source.param_size(),
          "siamese_update: structure mismatch");
  const double xi = siamese.xi;
  siamese.model.set_param_vector(xi * siamese.model.param_vector() +
                                 (1.0 - xi) * source.param_vector());
  if (source.cfg.ema_includes_memory) {
    require(siamese.model.bank.items.rows() == source.bank.items.rows() &&
                siamese.model.bank.items.cols() == source.bank.items.cols(),
            "siamese_update: memory bank shape mismatch");
    siamese.model.bank.items = xi * siamese.model.bank.items + (1.0 - xi) * source.bank.items;
  } else {
    siamese.model.bank = source.bank;
  }
  siamese.model.phase = source.phase;
  siamese.model.step = source.step;
}

// ---------------------------------------------------------------------------
// Checkpointing.
// ---------------------------------------------------------------------------

inline void defense_to_container(const DefenseState& state, TensorContainer& c,
                                 const std::string& prefix) {
  c.add(prefix + "analyzer_params", state.analyzer.param_vector(), "f8");
  c.add(prefix + "head_params", state.head.param_vector(), "f8");
  c.add(prefix + "memory_items", state.bank.items, "f8");
}

inline void defense_meta(const DefenseState& state, json& meta) {
  meta["analyzer_spec"] = state.analyzer.spec();
  meta["d_n"] = state.cfg.d_n;
  meta["d_m"] = state.cfg.d_m;
  meta["d_e"] = state.cfg.d_e;
  meta["memory_epsilon"] = state.cfg.memory_epsilon;
  meta["memory_enabled"] = state.cfg.memory_enabled;
  meta["softmax_read"] = state.cfg.softmax_read;
  meta["ema_includes_memory"] = state.cfg.ema_includes_memory;
  meta["phase"] = phase_name(state.phase);
  meta["step"] = state.step;
  meta["basis_id"] = state.basis_id;
}

inline DefenseState defense_from_container(const TensorContainer& c, const json& meta,
                                           const std::string& prefix) {
  DefenseConfig cfg;
  cfg.d_n = meta["d_n"].get<int>();
  cfg.d_m = meta["d_m"].get<int>();
  cfg.d_e = meta["d_e"].get<int>();
  cfg.memory_epsilon = meta["memory_epsilon"].get<double>();
  cfg.memory_enabled = meta["memory_enabled"].get<bool>();
  cfg.softmax_read = meta["softmax_read"].get<bool>();
  cfg.ema_includes_memory = meta["ema_includes_memory"].get<bool>();

  DefenseState state = DefenseState::init(meta["analyzer_spec"], cfg,
                                          meta["basis_id"].get<uint32_t>(), 0);
  state.analyzer.set_param_vector(c.vector(prefix + "analyzer_params"));
  state.head.set_param_vector(c.vector(prefix + "head_params"));
  state.bank.items = c.matrix(prefix + "memory_items");
  state.phase = meta["phase"].get<std::string>() == "warmup" ? Phase::warmup
                                                             : Phase::adversarial;
  state.step = meta["step"].get<int64_t>();
  return state;
}

inline void save_defense(const std::filesystem::path& dir, const DefenseState& state) {
  TensorContainer c;
  defense_to_container(state, c, "");
  c.meta()["kind"] = "defense";
  defense_meta(state, c.meta());
  c.save(dir);
}

inline DefenseState load_defense(const std::filesystem::path& dir) {
  TensorContainer c = TensorContainer::load(dir);
  if (c.meta().value("kind", "") != "defense")
    throw ValidationError("not a defense checkpoint: " + dir.string());
  return defense_from_container(c, c.meta(), "");
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_DEFENSE_HPP

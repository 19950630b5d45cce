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

#ifndef EIGENSHIELD_ATTACKS_HPP
#define EIGENSHIELD_ATTACKS_HPP

// Adversarial sample generation. Attacks maximize a pixel-differentiable
// loss; budgets are expressed as the noise-magnitude index
// I(zeta) = |zeta|_2 / |x|_2, realized through a per-image max-norm ball of
// radius I * |x|_2 / sqrt(d) (the radius at which a fully saturated
// perturbation meets the Euclidean budget exactly, so the realized ratio
// never exceeds the configured one). All outputs are clamped to [0,1].

#include <functional>
#include <string>
#include <vector>

#include "eigenshield/antibody.hpp"
#include "eigenshield/common.hpp"
#include "eigenshield/defense.hpp"
#include "eigenshield/eigenbasis.hpp"
#include "eigenshield/embedder.hpp"
#include "eigenshield/image.hpp"

namespace eigenshield {

struct AttackConfig {
  enum class Kind { fgsm, pgd, adaptive_fgsm, adaptive_pgd, sticker };

  Kind kind = Kind::fgsm;
  double noise_ratio = 0.04;  // target I(zeta); ignored when eta > 0
  double eta = 0.0;           // direct max-norm step/radius; 0 = derive from noise_ratio
  int steps = 10;             // iterative kinds
  double step_size = 0.0;     // 0 = 2.5 * radius / steps

  // sticker geometry (paper protocol: 20 x 72 on the forehead)
  int patch_rows = 20;
  int patch_cols = 72;
  int anchor_row = 4;
  int anchor_col = -1;  // -1 = horizontally centered
  int sticker_steps = 100;
  double sticker_step_size = 0.05;

  uint64_t seed = 0;

  static Kind kind_from_string(const std::string& s) {
    if (s == "fgsm") return Kind::fgsm;
    if (s == "pgd") return Kind::pgd;
    if (s == "adaptive_fgsm") return Kind::adaptive_fgsm;
    if (s == "adaptive_pgd") return Kind::adaptive_pgd;
    if (s == "sticker") return Kind::sticker;
    throw ValidationError("unknown attack kind '" + s + "'");
  }

  static std::string kind_to_string(Kind k) {
    switch (k) {
      case Kind::fgsm: return "fgsm";
      case Kind::pgd: return "pgd";
      case Kind::adaptive_fgsm: return "adaptive_fgsm";
      case Kind::adaptive_pgd: return "adaptive_pgd";
      case Kind::sticker: return "sticker";
    }
    return "?";
  }

  bool adaptive() const { return kind == Kind::adaptive_fgsm || kind == Kind::adaptive_pgd; }
  bool iterative() const { return kind == Kind::pgd || kind == Kind::adaptive_pgd; }
};

/// A pixel-differentiable attack objective (higher = more adversarial).
struct AttackObjective {
  std::function<double(const Image&)> loss;
  std::function<Image(const Image&)> grad;
};

/// I(zeta) = |x_adv - x|_2 / |x|_2 on flattened rasters.
inline double noise_magnitude(const Image& x, const Image& x_adv) {
  require(x.rows == x_adv.rows && x.cols == x_adv.cols, "noise_magnitude: shape mismatch");
  double xn = x.flatten().norm();
  if (xn == 0.0) throw Error("noise_magnitude: zero-norm clean image");
  return (x_adv.flatten() - x.flatten()).norm() / xn;
}

/// Max-norm radius realizing the configured Euclidean noise ratio.
inline double maxnorm_radius(const Image& x, const AttackConfig& cfg) {
  if (cfg.eta > 0.0) return cfg.eta;
  const double d = static_cast<double>(x.rows) * x.cols;
  return cfg.noise_ratio * x.flatten().norm() / std::sqrt(d);
}

/// One FGSM application: x + eta * sign(g), clamped to [0,1]. sign(0) = 0.
inline Image generate_adversarial_fgsm(const Image& x, const Image& loss_grad, double eta) {
  require(x.rows == loss_grad.rows && x.cols == loss_grad.cols,
          "fgsm: gradient shape mismatch");
  require(eta >= 0.0, "fgsm: eta must be non-negative");
  Image out = x;
  for (int r = 0; r < x.rows; ++r)
    for (int c = 0; c < x.cols; ++c) {
      double g = loss_grad.pix(r, c);
      double s = (g > 0.0) ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
      out.pix(r, c) = std::min(1.0, std::max(0.0, x.pix(r, c) + eta * s));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Objectives.
// ---------------------------------------------------------------------------

/// Feature-distance objective against a fixed reference embedding:
/// L(x') = 1 - cosine(F(x'), f_ref). Standard white-box dodging loss for a
/// verification model.
inline AttackObjective objective_feature_distance(const EmbeddingModel& embedder, Vec f_ref) {
  auto ref = std::make_shared<Vec>(std::move(f_ref));
  AttackObjective obj;
  obj.loss = [&embedder, ref](const Image& x) {
    return 1.0 - cosine(embedder.embed(x), *ref);
  };
  obj.grad = [&embedder, ref](const Image& x) {
    Vec f = embedder.embed(x);
    Vec dLdf = -cosine_grad_u(f, *ref);
    return embedder.embed_input_gradient(x, dLdf);
  };
  return obj;
}

/// Defense-aware wrapper: every loss/gradient evaluation first maps the
/// candidate through the fixed full-basis antibody a* (all retained
/// eigenvectors), so gradients flow through the projector. Noise components
/// outside the retained span contribute nothing.
inline AttackObjective objective_projected(AttackObjective base, const EigenBasis& basis) {
  auto inner = std::make_shared<AttackObjective>(std::move(base));
  AttackObjective obj;
  auto project = [&basis](const Image& x) {
    Vec flat = basis.synthesize(basis.project_full(x.flatten()));
    return Image::from_flat(flat, basis.rows, basis.cols, x.id);
  };
  obj.loss = [inner, project](const Image& x) { return inner->loss(project(x)); };
  obj.grad = [inner, project, &basis](const Image& x) {
    Image g = inner->grad(project(x));
    Vec back = basis.vectors * (basis.vectors.transpose() * g.flatten());
    return Image::from_flat(back, basis.rows, basis.cols);
  };
  return obj;
}

/// Self-supervised training objective: L(x) = 1 - cosine(F(x), F(D(x)))
/// through the (frozen) siamese defense in soft mode. The input appears in
/// both branches; the gradient accounts for both.
inline AttackObjective objective_siamese(const EmbeddingModel& embedder,
                                         const DefenseState& siamese_model,
                                         const EigenBasis& basis) {
  AttackObjective obj;
  obj.loss = [&embedder, &siamese_model, &basis](const Image& x) {
    SoftDefendTrace trace;
    Image recon = soft_defend_forward(siamese_model, basis, x, trace);
    return 1.0 - cosine(embedder.embed(x), embedder.embed(recon));
  };
  obj.grad = [&embedder, &siamese_model, &basis](const Image& x) {
    SoftDefendTrace trace;
    Image recon = soft_defend_forward(siamese_model, basis, x, trace);
    Vec u = embedder.embed(x);
    Vec v = embedder.embed(recon);
    Vec dLdu = -cosine_grad_u(u, v);
    Vec dLdv = -cosine_grad_u(v, u);
    Image gx = embedder.embed_input_gradient(x, dLdu);
    Image grecon = embedder.embed_input_gradient(recon, dLdv);
    Image gthrough = soft_defend_backward(siamese_model, basis, trace, grecon);
    gx.pix += gthrough.pix;
    return gx;
  };
  return obj;
}

// ---------------------------------------------------------------------------
// Attack drivers.
// ---------------------------------------------------------------------------

inline Image attack_fgsm(const Image& x, const AttackObjective& objective,
                         const AttackConfig& cfg) {
  return generate_adversarial_fgsm(x, objective.grad(x), maxnorm_radius(x, cfg));
}

/// PGD: iterated sign steps projected onto the max-norm ball around x, then
/// onto [0,1]. Returns the best-loss iterate, so the output loss is never
/// below the input loss.
inline Image attack_pgd(const Image& x, const AttackObjective& objective,
                        const AttackConfig& cfg) {
  require(cfg.steps >= 1, "pgd: steps must be >= 1");
  const double radius = maxnorm_radius(x, cfg);
  if (radius == 0.0) return x;
  const double step = cfg.step_size > 0.0 ? cfg.step_size : 2.5 * radius / cfg.steps;

  Image best = x;
  double best_loss = objective.loss(x);
  if (!std::isfinite(best_loss)) throw Error("pgd: non-finite loss at the clean input");

  Image cur = x;
  for (int t = 0; t < cfg.steps; ++t) {
    Image g = objective.grad(cur);
    for (int r = 0; r < x.rows; ++r)
      for (int c = 0; c < x.cols; ++c) {
        double gv = g.pix(r, c);
        double s = (gv > 0.0) ? 1.0 : (gv < 0.0 ? -1.0 : 0.0);
        double v = cur.pix(r, c) + step * s;
        v = std::min(x.pix(r, c) + radius, std::max(x.pix(r, c) - radius, v));
        cur.pix(r, c) = std::min(1.0, std::max(0.0, v));
      }
    double loss = objective.loss(cur);
    if (!std::isfinite(loss)) throw Error("pgd: non-finite loss at step " + std::to_string(t));
    if (loss > best_loss) {
      best_loss = loss;
      best = cur;
    }
  }
  return best;
}

/// Dispatch for the budgeted attacks; adaptive kinds route the objective
/// through the fixed full-basis projector first.
inline Image run_attack(const Image& x, AttackObjective objective, const AttackConfig& cfg,
                        const EigenBasis* basis) {
  if (cfg.adaptive()) {
    require(basis != nullptr, "adaptive attack requires a fitted basis");
    objective = objective_projected(std::move(objective), *basis);
  }
  if (cfg.iterative()) return attack_pgd(x, objective, cfg);
  return attack_fgsm(x, objective, cfg);
}

// ---------------------------------------------------------------------------
// Sticker attack (digital simulation of the impersonation protocol): one
// shared patch, optimized by iterative sign-gradient ascent on the mean
// cosine similarity between patched gallery images and the target identity.
// Patch pixels are free in [0,1]; no noise-magnitude budget applies.
// ---------------------------------------------------------------------------

inline int sticker_anchor_col(const AttackConfig& cfg, int image_cols) {
  return cfg.anchor_col >= 0 ? cfg.anchor_col : (image_cols - cfg.patch_cols) / 2;
}

inline Image apply_patch(const Image& image, const Mat& patch, int row, int col) {
  require(row >= 0 && col >= 0 && row + patch.rows() <= image.rows &&
              col + patch.cols() <= image.cols,
          "sticker: patch anchor out of bounds");
  Image out = image;
  out.pix.block(row, col, patch.rows(), patch.cols()) = patch;
  return out;
}

struct StickerResult {
  Mat patch;                         // patch_rows x patch_cols in [0,1]
  std::vector<Image> patched;        // gallery with the patch applied
  std::vector<double> objective_trajectory;  // mean target-cosine per iteration
};

inline StickerResult attack_sticker(const std::vector<Image>& gallery, const Image& target,
                                    const EmbeddingModel& embedder, const AttackConfig& cfg) {
  require(!gallery.empty(), "sticker: empty gallery");
  const int row = cfg.anchor_row;
  const int col = sticker_anchor_col(cfg, gallery[0].cols);
  require(row >= 0 && col >= 0 && row + cfg.patch_rows <= gallery[0].rows &&
              col + cfg.patch_cols <= gallery[0].cols,
          "sticker: patch anchor out of bounds for this gallery");

  const Vec f_target = embedder.embed(target);
  Mat patch = Mat::Constant(cfg.patch_rows, cfg.patch_cols, 0.5);

  auto mean_objective = [&](const Mat& p) {
    double acc = 0.0;
    for (const auto& im : gallery)
      acc += cosine(embedder.embed(apply_patch(im, p, row, col)), f_target);
    return acc / static_cast<double>(gallery.size());
  };

  StickerResult res;
  res.objective_trajectory.push_back(mean_objective(patch));

  for (int t = 0; t < cfg.sticker_steps; ++t) {
    Mat grad = Mat::Zero(cfg.patch_rows, cfg.patch_cols);
    for (const auto& im : gallery) {
      Image patched = apply_patch(im, patch, row, col);
      Vec f = embedder.embed(patched);
      Vec dOdf = cosine_grad_u(f, f_target);
      Image gin = embedder.embed_input_gradient(patched, dOdf);
      grad += gin.pix.block(row, col, cfg.patch_rows, cfg.patch_cols);
    }
    grad /= static_cast<double>(gallery.size());
    for (Eigen::Index r = 0; r < patch.rows(); ++r)
      for (Eigen::Index c = 0; c < patch.cols(); ++c) {
        double s = (grad(r, c) > 0.0) ? 1.0 : (grad(r, c) < 0.0 ? -1.0 : 0.0);
        patch(r, c) = std::min(1.0, std::max(0.0, patch(r, c) + cfg.sticker_step_size * s));
      }
    res.objective_trajectory.push_back(mean_objective(patch));
  }

  res.patch = patch;
  res.patched.reserve(gallery.size());
  for (const auto& im : gallery) res.patched.push_back(apply_patch(im, patch, row, col));
  return res;
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_ATTACKS_HPP

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

#ifndef EIGENSHIELD_EVAL_HPP
#define EIGENSHIELD_EVAL_HPP

// Verification experiment runner: perturb one side of each pair (optional),
// pass both sides through the defense in MAP mode (optional), score by
// embedding cosine, and aggregate EER plus antibody analytics into a report.

#include <chrono>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "eigenshield/antibody.hpp"
#include "eigenshield/attacks.hpp"
#include "eigenshield/common.hpp"
#include "eigenshield/defense.hpp"
#include "eigenshield/eigenbasis.hpp"
#include "eigenshield/embedder.hpp"
#include "eigenshield/eval_scores.hpp"
#include "eigenshield/image.hpp"
#include "eigenshield/tensorio.hpp"

namespace eigenshield {

struct EvalReport {
  std::string experiment_id;
  bool defense_on = false;
  std::string attack_kind = "none";
  double attack_budget = 0.0;
  double eer = 1.0;
  double threshold = 0.0;
  std::vector<CurvePoint> curve;
  double mean_noise_ratio = 0.0;  // mean realized I(zeta) over perturbed images
  double mean_cardinality = 0.0;  // mean |a| over defended images (defense on)
  double specificity = 0.0;       // V over defended antibodies (defense on)
  int pairs_evaluated = 0;
  int pairs_skipped = 0;
  double runtime_seconds = 0.0;

  json to_json() const {
    json j;
    j["experiment_id"] = experiment_id;
    j["defense"] = defense_on;
    j["attack"] = attack_kind;
    j["attack_budget"] = attack_budget;
    j["eer"] = eer;
    j["threshold"] = threshold;
    j["mean_noise_ratio"] = mean_noise_ratio;
    j["mean_cardinality"] = mean_cardinality;
    j["specificity_v"] = specificity;
    j["pairs_evaluated"] = pairs_evaluated;
    j["pairs_skipped"] = pairs_skipped;
    j["runtime_seconds"] = runtime_seconds;
    return j;
  }

  /// One row of the text table the CLI prints.
  std::string table_row() const {
    std::ostringstream ss;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-16s %-10s %8.2f%% %10.4f %10.1f %8.1f",
                  attack_kind.c_str(), defense_on ? "on" : "off", 100.0 * eer, threshold,
                  mean_cardinality, runtime_seconds);
    ss << buf;
    return ss.str();
  }

  static std::string table_header() {
    return "attack           defense        EER  threshold    mean|a|  time(s)";
  }
};

/// Pre-generated perturbed images, keyed by corpus index. Used to evaluate
/// persisted adversarial sets.
using PerturbedSet = std::unordered_map<int, Image>;

struct VerificationSetup {
  const DefenseState* defense = nullptr;   // null = defense off
  const EigenBasis* basis = nullptr;       // required when defense on or attack adaptive
  const EmbeddingModel* embedder = nullptr;
  const AttackConfig* attack = nullptr;    // null = clean evaluation
  const PerturbedSet* perturbed = nullptr; // overrides on-the-fly attack generation
  std::string experiment_id = "exp";
};

/// Runs the pair protocol. Adversarial noise is applied to the designated
/// side of each pair; the other side stays clean. With the defense on, both
/// sides pass through MAP-mode defense before embedding.
inline EvalReport run_verification(const VerificationSetup& setup,
                                   const std::vector<Image>& corpus,
                                   const PairProtocol& pairs) {
  require(setup.embedder != nullptr, "run_verification: embedder is required");
  if (setup.defense) require(setup.basis != nullptr, "run_verification: defense needs a basis");
  const auto t0 = std::chrono::steady_clock::now();

  EvalReport report;
  report.experiment_id = setup.experiment_id;
  report.defense_on = setup.defense != nullptr;
  if (setup.attack) {
    report.attack_kind = AttackConfig::kind_to_string(setup.attack->kind);
    report.attack_budget = setup.attack->noise_ratio;
  } else if (setup.perturbed) {
    report.attack_kind = "persisted";
  }

  // Caches keyed by corpus index: the same image appears in many pairs.
  std::unordered_map<int, Image> perturbed_cache;
  std::unordered_map<int, Vec> clean_emb_cache;
  std::unordered_map<int, Vec> perturbed_emb_cache;
  std::unordered_map<int, Antibody> antibody_cache;
  double noise_ratio_sum = 0.0;
  int noise_ratio_count = 0;

  auto defended_embedding = [&](const Image& im, int cache_slot,
                                std::unordered_map<int, Vec>& cache) -> const Vec& {
    auto it = cache.find(cache_slot);
    if (it != cache.end()) return it->second;
    Vec emb;
    if (setup.defense) {
      DefendResult res = defend(*setup.defense, *setup.basis, im, DefendMode::map);
      if (res.antibody) antibody_cache.emplace(cache_slot, *res.antibody);
      emb = setup.embedder->embed(res.reconstructed);
    } else {
      emb = setup.embedder->embed(im);
    }
    return cache.emplace(cache_slot, std::move(emb)).first->second;
  };

  auto perturb = [&](int index) -> const Image& {
    auto it = perturbed_cache.find(index);
    if (it != perturbed_cache.end()) return it->second;
    const Image& clean = corpus[static_cast<size_t>(index)];
    Image adv;
    if (setup.perturbed) {
      auto f = setup.perturbed->find(index);
      require(f != setup.perturbed->end(),
              "run_verification: persisted set is missing image index " + std::to_string(index));
      adv = f->second;
    } else {
      AttackObjective obj =
          objective_feature_distance(*setup.embedder, setup.embedder->embed(clean));
      adv = run_attack(clean, std::move(obj), *setup.attack, setup.basis);
    }
    noise_ratio_sum += noise_magnitude(clean, adv);
    ++noise_ratio_count;
    return perturbed_cache.emplace(index, std::move(adv)).first->second;
  };

  const bool attacking = setup.attack != nullptr || setup.perturbed != nullptr;
  const bool perturb_first = pairs.perturbed_side == PairProtocol::PerturbedSide::first;

  ScoreSet scores;
  auto score_pairs = [&](const std::vector<PairProtocol::Pair>& list,
                         std::vector<double>& out) {
    for (const auto& p : list) {
      try {
        int pert_idx = perturb_first ? p.a : p.b;
        int clean_idx = perturb_first ? p.b : p.a;
        const Vec* emb_pert;
        if (attacking) {
          const Image& adv = perturb(pert_idx);
          emb_pert = &defended_embedding(adv, pert_idx, perturbed_emb_cache);
        } else {
          emb_pert = &defended_embedding(corpus[static_cast<size_t>(pert_idx)], pert_idx,
                                         clean_emb_cache);
        }
        const Vec& emb_clean = defended_embedding(corpus[static_cast<size_t>(clean_idx)],
                                                  clean_idx, clean_emb_cache);
        out.push_back(cosine(*emb_pert, emb_clean));
        ++report.pairs_evaluated;
      } catch (const Error&) {
        ++report.pairs_skipped;
      }
    }
  };
  score_pairs(pairs.positives, scores.positives);
  score_pairs(pairs.negatives, scores.negatives);

  EerResult eer = compute_eer(scores);
  report.eer = eer.eer;
  report.threshold = eer.threshold;
  report.curve = far_frr_curve(scores);
  if (noise_ratio_count > 0) report.mean_noise_ratio = noise_ratio_sum / noise_ratio_count;

  if (setup.defense && !antibody_cache.empty()) {
    double card = 0.0;
    std::vector<Antibody> all;
    all.reserve(antibody_cache.size());
    for (const auto& [idx, a] : antibody_cache) {
      card += a.cardinality();
      all.push_back(a);
    }
    report.mean_cardinality = card / static_cast<double>(antibody_cache.size());
    if (all.size() >= 2) report.specificity = specificity_v(all);
  }

  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// Impersonation-protocol accuracy under the sticker attack: the fraction of
/// patched gallery images whose (defended) similarity to the target stays
/// below the decision threshold. Higher is better for the defense.
inline double sticker_accuracy(const DefenseState* defense, const EigenBasis* basis,
                               const EmbeddingModel& embedder,
                               const std::vector<Image>& patched_gallery, const Image& target,
                               double threshold = 0.2) {
  require(!patched_gallery.empty(), "sticker_accuracy: empty gallery");
  if (defense) require(basis != nullptr, "sticker_accuracy: defense needs a basis");

  auto embed_side = [&](const Image& im) {
    if (!defense) return embedder.embed(im);
    return embedder.embed(defend(*defense, *basis, im, DefendMode::map).reconstructed);
  };

  const Vec f_target = embed_side(target);
  int correct = 0;
  for (const auto& im : patched_gallery)
    if (cosine(embed_side(im), f_target) < threshold) ++correct;
  return static_cast<double>(correct) / static_cast<double>(patched_gallery.size());
}

// ---------------------------------------------------------------------------
// Persisted adversarial sets: lossless f8 rasters plus a manifest, with PGM
// previews for the curious. Exact round trips keep re-evaluation from a
// persisted set identical to the in-memory run.
// ---------------------------------------------------------------------------

inline void save_adversarial_set(const std::filesystem::path& dir,
                                 const std::vector<Image>& corpus, const PerturbedSet& set,
                                 const AttackConfig& cfg) {
  TensorContainer c;
  json index = json::array();
  for (const auto& [idx, im] : set) {
    std::string key = "img" + std::to_string(idx);
    c.add(key, im.pix, "f8");
    json entry;
    entry["index"] = idx;
    entry["id"] = corpus[static_cast<size_t>(idx)].id;
    entry["realized_noise_ratio"] = noise_magnitude(corpus[static_cast<size_t>(idx)], im);
    index.push_back(entry);
  }
  c.meta()["kind"] = "adversarial-set";
  c.meta()["attack"] = AttackConfig::kind_to_string(cfg.kind);
  c.meta()["noise_ratio"] = cfg.noise_ratio;
  c.meta()["eta"] = cfg.eta;
  c.meta()["steps"] = cfg.steps;
  c.meta()["seed"] = cfg.seed;
  c.meta()["images"] = index;
  c.save(dir);

  auto preview = dir / "preview";
  std::filesystem::create_directories(preview);
  for (const auto& [idx, im] : set)
    pnm::write_pgm(preview / ("img" + std::to_string(idx) + ".pgm"), im);
}

inline PerturbedSet load_adversarial_set(const std::filesystem::path& dir,
                                         const std::vector<Image>& corpus) {
  TensorContainer c = TensorContainer::load(dir);
  if (c.meta().value("kind", "") != "adversarial-set")
    throw ValidationError("not an adversarial set: " + dir.string());
  PerturbedSet set;
  for (const auto& entry : c.meta()["images"]) {
    int idx = entry["index"].get<int>();
    require(idx >= 0 && idx < static_cast<int>(corpus.size()),
            "adversarial set references image index outside the corpus");
    Mat pix = c.matrix("img" + std::to_string(idx));
    Image im(static_cast<int>(pix.rows()), static_cast<int>(pix.cols()));
    im.pix = pix;
    im.id = corpus[static_cast<size_t>(idx)].id;
    im.identity = corpus[static_cast<size_t>(idx)].identity;
    set.emplace(idx, std::move(im));
  }
  return set;
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_EVAL_HPP

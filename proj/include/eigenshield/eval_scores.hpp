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

#ifndef EIGENSHIELD_EVAL_SCORES_HPP
#define EIGENSHIELD_EVAL_SCORES_HPP

// Verification score aggregation and the EER operating point.
//
// Conventions: FRR(T) = #{s in positives : s <= T} / N_p (a positive scoring
// exactly T counts as rejected) and FAR(T) = #{s in negatives : s > T} / N_n.
// The EER is the crossing of the two step functions over the candidate
// thresholds (the sorted score values), linearly interpolated when the steps
// pass each other without exact equality.

#include <algorithm>
#include <vector>

#include "eigenshield/common.hpp"

namespace eigenshield {

struct ScoreSet {
  std::vector<double> positives;  // genuine-pair similarities
  std::vector<double> negatives;  // impostor-pair similarities
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

struct CurvePoint {
  double threshold;
  double far;
  double frr;
};

/// FAR/FRR at every candidate threshold, in ascending threshold order.
inline std::vector<CurvePoint> far_frr_curve(const ScoreSet& scores) {
  require(!scores.positives.empty() && !scores.negatives.empty(),
          "far_frr_curve: both score sides must be non-empty");
  std::vector<double> pos = scores.positives;
  std::vector<double> neg = scores.negatives;
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  std::vector<double> thresholds;
  thresholds.reserve(pos.size() + neg.size());
  thresholds.insert(thresholds.end(), pos.begin(), pos.end());
  thresholds.insert(thresholds.end(), neg.begin(), neg.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<CurvePoint> curve;
  curve.reserve(thresholds.size());
  for (double t : thresholds) {
    double frr = static_cast<double>(std::upper_bound(pos.begin(), pos.end(), t) - pos.begin()) /
                 static_cast<double>(pos.size());
    double far = static_cast<double>(neg.end() - std::upper_bound(neg.begin(), neg.end(), t)) /
                 static_cast<double>(neg.size());
    curve.push_back({t, far, frr});
  }
  return curve;
}

/// Equal error rate: the value where FAR(T) and FRR(T) cross. A virtual
/// candidate just below the smallest score anchors the sweep (there FAR = 1,
/// FRR = 0, so a crossing always exists).
inline EerResult compute_eer(const ScoreSet& scores) {
  require(!scores.positives.empty() && !scores.negatives.empty(),
          "compute_eer: both score sides must be non-empty");
  std::vector<CurvePoint> curve = far_frr_curve(scores);

  const double span = std::max(1.0, curve.back().threshold - curve.front().threshold);
  CurvePoint prev{curve.front().threshold - 1e-9 * span, 1.0, 0.0};

  for (const CurvePoint& pt : curve) {
    double diff = pt.far - pt.frr;
    if (diff == 0.0) return {pt.far, pt.threshold};
    if (diff < 0.0) {
      // Crossing inside (prev.threshold, pt.threshold): interpolate both
      // curves linearly and intersect.
      double d1 = prev.far - prev.frr;   // > 0
      double d2 = pt.frr - pt.far;       // > 0
      double u = d1 / (d1 + d2);
      double eer = prev.far + (pt.far - prev.far) * u;
      double threshold = prev.threshold + (pt.threshold - prev.threshold) * u;
      return {eer, threshold};
    }
    prev = pt;
  }
  // FAR stays above FRR over all candidates; cannot happen since FAR = 0 and
  // FRR = 1 at the largest score.
  throw Error("compute_eer: no crossing found");
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_EVAL_SCORES_HPP

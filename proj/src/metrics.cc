// sslsv/metrics.cc

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "sslsv/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sslsv::metrics {

namespace {

void split_by_label(const ScoreSet& scores, std::vector<double>* targets,
                    std::vector<double>* nontargets) {
  validate_score_set(scores);
  if (!scores.trials.labels)
    throw_error(ErrorCode::kUnknownLabel, "metrics need labeled trials");
  const auto& labels = *scores.trials.labels;
  for (std::size_t k = 0; k < scores.size(); ++k)
    (labels[k] ? *targets : *nontargets).push_back(scores.scores[k]);
  if (targets->empty() || nontargets->empty())
    throw_error(ErrorCode::kSingleClass,
                "metrics need both target and nontarget trials");
}

}  // namespace

std::vector<DetPoint> det_points(const ScoreSet& scores) {
  std::vector<double> tgt, non;
  split_by_label(scores, &tgt, &non);
  std::sort(tgt.begin(), tgt.end());
  std::sort(non.begin(), non.end());

  std::vector<double> thresholds = scores.scores;
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  const double n_tgt = static_cast<double>(tgt.size());
  const double n_non = static_cast<double>(non.size());
  std::vector<DetPoint> out;
  out.reserve(thresholds.size() + 1);
  for (double thr : thresholds) {
    DetPoint p;
    p.threshold = thr;
    p.p_miss = static_cast<double>(
                   std::lower_bound(tgt.begin(), tgt.end(), thr) -
                   tgt.begin()) /
               n_tgt;
    p.p_fa = static_cast<double>(non.end() -
                                 std::lower_bound(non.begin(), non.end(),
                                                  thr)) /
             n_non;
    out.push_back(p);
  }
  // Reject-everything endpoint above the top score.
  DetPoint last;
  last.threshold = std::numeric_limits<double>::infinity();
  last.p_miss = 1.0;
  last.p_fa = 0.0;
  out.push_back(last);

  for (std::size_t k = 1; k < out.size(); ++k) {
    SSLSV_CHECK(out[k].p_miss >= out[k - 1].p_miss,
                "p_miss not non-decreasing");
    SSLSV_CHECK(out[k].p_fa <= out[k - 1].p_fa, "p_fa not non-increasing");
  }
  return out;
}

double eer(const ScoreSet& scores) {
  std::vector<DetPoint> pts = det_points(scores);
  // diff goes from -1 at the accept-everything end to +1 at the final
  // reject-everything point, so a sign change always exists.
  std::size_t k = 0;
  while (k < pts.size() && pts[k].p_miss - pts[k].p_fa < 0.0) ++k;
  SSLSV_CHECK(k < pts.size(), "equal error crossing not found");
  if (k == 0) return 0.5 * (pts[0].p_miss + pts[0].p_fa);
  const DetPoint& a = pts[k - 1];
  const DetPoint& b = pts[k];
  const double da = a.p_miss - a.p_fa;  // < 0
  const double db = b.p_miss - b.p_fa;  // >= 0
  const double t = da == db ? 0.0 : da / (da - db);
  const double pm = a.p_miss + t * (b.p_miss - a.p_miss);
  const double pf = a.p_fa + t * (b.p_fa - a.p_fa);
  return 0.5 * (pm + pf);
}

double min_dcf(const ScoreSet& scores, const DcfConfig& cfg) {
  if (!(cfg.p_target > 0.0 && cfg.p_target < 1.0) || !(cfg.c_miss > 0.0) ||
      !(cfg.c_fa > 0.0))
    throw_error(ErrorCode::kInvalidArgument, "min_dcf: bad cost parameters");
  std::vector<DetPoint> pts = det_points(scores);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : pts)
    best = std::min(best, cfg.c_miss * cfg.p_target * p.p_miss +
                              cfg.c_fa * (1.0 - cfg.p_target) * p.p_fa);
  const double floor =
      std::min(cfg.c_miss * cfg.p_target, cfg.c_fa * (1.0 - cfg.p_target));
  return best / floor;
}

double rel_delta(double base, double improved) {
  if (!(base > 0.0))
    throw_error(ErrorCode::kInvalidArgument, "rel_delta: base must be > 0");
  return 100.0 * (base - improved) / base;
}

}  // namespace sslsv::metrics

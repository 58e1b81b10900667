// sslsv/metrics.h

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

#pragma once

#include <vector>

#include "sslsv/types.h"

namespace sslsv::metrics {

struct DetPoint {
  double threshold = 0.0;
  double p_miss = 0.0;
  double p_fa = 0.0;
};

// Error tradeoff curve with the convention accept iff score >= threshold:
//   p_miss = #(targets < thr) / #targets
//   p_fa   = #(nontargets >= thr) / #nontargets
// One point per unique score (ascending) plus a final reject-all point.
// Requires labeled trials with at least one target and one nontarget.
// p_miss is non-decreasing and p_fa non-increasing along the sweep; this
// is checked on every call.
std::vector<DetPoint> det_points(const ScoreSet& scores);

// Equal error rate by linear interpolation between the two sweep points
// where p_miss crosses p_fa.
double eer(const ScoreSet& scores);

struct DcfConfig {
  double p_target = 0.05;
  double c_miss = 1.0;
  double c_fa = 1.0;
};

// Minimum normalized detection cost over the sweep:
//   min over thr of (c_miss * p_target * p_miss + c_fa * (1-p_target) * p_fa)
// divided by min(c_miss * p_target, c_fa * (1 - p_target)).
double min_dcf(const ScoreSet& scores, const DcfConfig& cfg = {});

// Relative improvement in percent: 100 * (base - improved) / base; base
// must be positive.
double rel_delta(double base, double improved);

}  // namespace sslsv::metrics

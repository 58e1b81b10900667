// sslsv/test_metrics.cc

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sslsv/metrics.h"
#include "sslsv/rng.h"
#include "sslsv/types.h"

using namespace sslsv;
using namespace sslsv::metrics;

namespace {

ScoreSet make_scores(const std::vector<double>& scores,
                     const std::vector<std::uint8_t>& labels) {
  ScoreSet out;
  for (std::size_t i = 0; i < scores.size(); ++i)
    out.trials.pairs.emplace_back("e" + std::to_string(i),
                                  "t" + std::to_string(i));
  out.trials.labels = labels;
  out.scores = scores;
  return out;
}

// Miss and false-alarm rates at one threshold, straight from the accept
// rule score >= threshold.
std::pair<double, double> rates_at(const ScoreSet& ss, double thr) {
  std::size_t miss = 0, fa = 0, tgt = 0, non = 0;
  for (std::size_t i = 0; i < ss.size(); ++i) {
    if ((*ss.trials.labels)[i]) {
      ++tgt;
      if (ss.scores[i] < thr) ++miss;
    } else {
      ++non;
      if (ss.scores[i] >= thr) ++fa;
    }
  }
  return {static_cast<double>(miss) / static_cast<double>(tgt),
          static_cast<double>(fa) / static_cast<double>(non)};
}

// Exhaustive candidate thresholds: every score, plus a reject-all endpoint.
std::vector<double> candidate_thresholds(const ScoreSet& ss) {
  std::vector<double> t(ss.scores.begin(), ss.scores.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  t.push_back(std::numeric_limits<double>::infinity());
  return t;
}

double oracle_min_dcf(const ScoreSet& ss, const DcfConfig& cfg) {
  double best = std::numeric_limits<double>::infinity();
  for (double thr : candidate_thresholds(ss)) {
    auto [pm, pf] = rates_at(ss, thr);
    double cost = cfg.c_miss * cfg.p_target * pm +
                  cfg.c_fa * (1.0 - cfg.p_target) * pf;
    best = std::min(best, cost);
  }
  return best / std::min(cfg.c_miss * cfg.p_target,
                         cfg.c_fa * (1.0 - cfg.p_target));
}

ScoreSet random_scores(Rng& rng, std::size_t max_trials) {
  for (;;) {
    std::size_t n = 2 + rng.uniform_int(max_trials - 1);
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    bool has_t = false, has_n = false;
    for (std::size_t i = 0; i < n; ++i) {
      // A coarse grid forces plenty of exact ties.
      scores.push_back(0.25 * static_cast<double>(rng.uniform_int(9)));
      bool t = rng.uniform() < 0.5;
      labels.push_back(t ? 1 : 0);
      has_t |= t;
      has_n |= !t;
    }
    if (has_t && has_n) return make_scores(scores, labels);
  }
}

}  // namespace

TEST_CASE("det sweep matches the definition at every unique score") {
  Rng rng(41);
  for (int rep = 0; rep < 200; ++rep) {
    ScoreSet ss = random_scores(rng, 20);
    std::vector<DetPoint> pts = det_points(ss);
    std::vector<double> cands = candidate_thresholds(ss);
    REQUIRE(pts.size() == cands.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      auto [pm, pf] = rates_at(ss, cands[i]);
      CHECK(pts[i].threshold == cands[i]);
      CHECK(pts[i].p_miss == pm);
      CHECK(pts[i].p_fa == pf);
    }
    // Monotone in both coordinates along the sweep.
    for (std::size_t i = 1; i < pts.size(); ++i) {
      CHECK(pts[i].p_miss >= pts[i - 1].p_miss);
      CHECK(pts[i].p_fa <= pts[i - 1].p_fa);
    }
    // Endpoints: accept-all at the minimum score, reject-all at the end.
    CHECK(pts.front().p_fa == 1.0);
    CHECK(pts.back().p_miss == 1.0);
    CHECK(pts.back().p_fa == 0.0);
  }
}

TEST_CASE("eer sits between the bracketing sweep rates") {
  Rng rng(43);
  for (int rep = 0; rep < 500; ++rep) {
    ScoreSet ss = random_scores(rng, 20);
    double e = eer(ss);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
    // The crossing bracket: the last point with p_fa >= p_miss and the
    // first with p_miss >= p_fa enclose the interpolated value.
    std::vector<DetPoint> pts = det_points(ss);
    double lo = 2.0, hi = -1.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      if (pts[i].p_fa >= pts[i].p_miss && pts[i + 1].p_miss >= pts[i + 1].p_fa) {
        lo = std::min({pts[i].p_miss, pts[i + 1].p_fa});
        hi = std::max({pts[i].p_fa, pts[i + 1].p_miss});
        break;
      }
    }
    if (hi >= 0.0) {
      CHECK(e >= lo - 1e-12);
      CHECK(e <= hi + 1e-12);
    }
  }
}

TEST_CASE("eer is exact where miss and false alarm meet on a point") {
  // At threshold 0.7 exactly one target (0.1) is missed and one
  // nontarget (0.85) accepted, so the sweep hits 0.25 on both axes.
  ScoreSet ss = make_scores({0.9, 0.8, 0.7, 0.1, 0.85, 0.3, 0.2, 0.05},
                            {1, 1, 1, 1, 0, 0, 0, 0});
  CHECK(eer(ss) == doctest::Approx(0.25));
}

TEST_CASE("perfectly separated scores give zero eer") {
  ScoreSet ss = make_scores({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
  CHECK(eer(ss) == doctest::Approx(0.0));
  CHECK(min_dcf(ss) == doctest::Approx(0.0));
}

TEST_CASE("inverted scores give an eer of one") {
  ScoreSet ss = make_scores({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0});
  CHECK(eer(ss) == doctest::Approx(1.0));
}

TEST_CASE("all-equal scores read as chance") {
  ScoreSet ss = make_scores({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0});
  // Only two sweep points: accept-all (miss 0, fa 1) and reject-all
  // (miss 1, fa 0); the interpolated crossing is one half.
  CHECK(eer(ss) == doctest::Approx(0.5));
}

TEST_CASE("eer is invariant under monotone score transforms") {
  Rng rng(47);
  for (int rep = 0; rep < 50; ++rep) {
    ScoreSet ss = random_scores(rng, 16);
    ScoreSet warped = ss;
    for (double& s : warped.scores) s = std::tanh(2.0 * s) + 3.0;
    CHECK(eer(warped) == doctest::Approx(eer(ss)).epsilon(1e-12));
    CHECK(min_dcf(warped) == doctest::Approx(min_dcf(ss)).epsilon(1e-12));
  }
}

TEST_CASE("min_dcf matches the exhaustive-threshold oracle") {
  Rng rng(53);
  DcfConfig cheap_fa{0.05, 1.0, 1.0};
  DcfConfig costly_miss{0.3, 10.0, 1.0};
  for (int rep = 0; rep < 400; ++rep) {
    ScoreSet ss = random_scores(rng, 20);
    for (const DcfConfig& cfg : {cheap_fa, costly_miss}) {
      double got = min_dcf(ss, cfg);
      double want = oracle_min_dcf(ss, cfg);
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
      CHECK(got <= 1.0 + 1e-12);
      CHECK(got >= 0.0);
    }
  }
}

TEST_CASE("metrics refuse unlabeled or one-sided trials") {
  ScoreSet unlabeled;
  unlabeled.trials.pairs = {{"a", "b"}};
  unlabeled.scores = {0.5};
  CHECK_THROWS_AS(eer(unlabeled), Error);

  ScoreSet one_sided = make_scores({0.5, 0.6}, {1, 1});
  CHECK_THROWS_AS(eer(one_sided), Error);
  CHECK_THROWS_AS(det_points(one_sided), Error);
  CHECK_THROWS_AS(min_dcf(one_sided), Error);
}

TEST_CASE("relative improvement lands its examples") {
  CHECK(rel_delta(4.0, 4.0) == doctest::Approx(0.0));
  CHECK(rel_delta(4.0, 2.0) == doctest::Approx(50.0));
  CHECK(rel_delta(8.032, 6.032) == doctest::Approx(100.0 * 2.0 / 8.032));
  CHECK_THROWS_AS(rel_delta(0.0, 1.0), Error);
}

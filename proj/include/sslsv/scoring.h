// sslsv/scoring.h

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

#include <cstdint>
#include <span>
#include <vector>

#include "sslsv/embedops.h"
#include "sslsv/types.h"

namespace sslsv::scoring {

// Cosine score for every trial pair; both sides are looked up by id in
// the same embedding set.
ScoreSet score_trials(const EmbeddingSet& embeddings, const TrialList& trials,
                      double eps_norm = embedops::kDefaultEpsNorm);

// Deterministic cohort choice from a pool: ids are sorted, a seeded
// uniform subsample of max_size is drawn without replacement, and the
// result is returned in id order.  max_size must not exceed the pool.
EmbeddingSet cohort_select(const EmbeddingSet& pool, std::size_t max_size,
                           std::uint64_t seed);

struct AdaptiveConfig {
  std::size_t drop_top = 10;  // most similar cohort scores discarded
  std::size_t use_top = 200;  // scores kept after the drop
  bool adapt_z = true;        // trim on the enroll (z) side
  bool adapt_t = true;        // trim on the test (t) side
};

struct NormStats {
  double mean = 0.0;
  double std = 1.0;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

// Mean and population std (floored at 1e-6) of a cohort score list.
// With adapt set, the scores are sorted descending, the top drop_top are
// discarded and the next use_top kept; both counts are clipped to what
// is available, but at least one score must survive.
NormStats cohort_stats(std::span<const double> scores, bool adapt,
                       const AdaptiveConfig& cfg);

// Per-enroll and per-test normalization statistics over distinct trial
// sides.  The exclusion vectors give, per enroll row / test column, the
// cohort index holding the same utterance (excluded from that side's
// statistics), or -1.
struct PairNormStats {
  std::vector<NormStats> enroll;
  std::vector<NormStats> test;
};

// ZT-norm statistics.  enroll_cohort is n_enroll x n_cohort raw cosine
// scores, cohort_test is n_cohort x n_test, cohort_cohort is the raw
// cohort self-similarity matrix (diagonal always excluded).  The test
// side statistics are computed over z-normalized cohort-vs-test scores,
// where each cohort row is z-normalized by its own cohort_cohort stats.
PairNormStats zt_stats(const Matrix& enroll_cohort, const Matrix& cohort_test,
                       const Matrix& cohort_cohort,
                       const std::vector<std::int64_t>& enroll_is_cohort,
                       const std::vector<std::int64_t>& test_is_cohort,
                       const AdaptiveConfig& cfg);

// S-norm statistics: enroll side from enroll_cohort rows, test side from
// cohort_test columns, both on raw scores.
PairNormStats s_stats(const Matrix& enroll_cohort, const Matrix& cohort_test,
                      const std::vector<std::int64_t>& enroll_is_cohort,
                      const std::vector<std::int64_t>& test_is_cohort,
                      const AdaptiveConfig& cfg);

// ((score - mu_e)/sd_e - mu_t)/sd_t
double zt_apply(double score, const NormStats& e, const NormStats& t);
// 0.5 * ((score - mu_e)/sd_e + (score - mu_t)/sd_t)
double s_apply(double score, const NormStats& e, const NormStats& t);

enum class NormMethod { kZt, kS };

struct NormConfig {
  NormMethod method = NormMethod::kZt;
  AdaptiveConfig adaptive;
  double eps_norm = embedops::kDefaultEpsNorm;
};

// Normalizes raw trial scores against a cohort.  Trial sides are looked
// up in `embeddings` by id; the cohort is canonicalized to id order first
// so its file row order cannot change the result, and a cohort member
// sharing an id with a trial side is excluded from that side's
// statistics.
ScoreSet normalize_scores(const ScoreSet& raw, const EmbeddingSet& embeddings,
                          const EmbeddingSet& cohort, const NormConfig& cfg);

// Mean of aligned score sets; every set must carry the identical trial
// list (same order, same labels).
ScoreSet fuse(const std::vector<ScoreSet>& sets);

}  // namespace sslsv::scoring

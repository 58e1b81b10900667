// sslsv/scoring.cc

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

#include "sslsv/scoring.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <unordered_map>

#include "sslsv/kernels.h"
#include "sslsv/rng.h"

namespace sslsv::scoring {

namespace {

constexpr double kStdFloor = 1.0e-6;

// Distinct ids in first-appearance order plus the per-trial index.
void distinct_sides(const TrialList& trials, bool enroll_side,
                    std::vector<std::string>* ids,
                    std::vector<std::uint32_t>* index_of_trial) {
  std::unordered_map<std::string, std::uint32_t> seen;
  index_of_trial->resize(trials.size());
  for (std::size_t k = 0; k < trials.size(); ++k) {
    const std::string& id =
        enroll_side ? trials.pairs[k].first : trials.pairs[k].second;
    auto [it, inserted] =
        seen.emplace(id, static_cast<std::uint32_t>(ids->size()));
    if (inserted) ids->push_back(id);
    (*index_of_trial)[k] = it->second;
  }
}

Matrix gather_rows(const EmbeddingSet& set,
                   const std::vector<std::string>& ids) {
  Matrix out(ids.size(), set.dim());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto src = set.mat.row(set.index_of(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<std::int64_t> cohort_positions(
    const std::vector<std::string>& side_ids,
    const std::vector<std::string>& cohort_ids) {
  // cohort_ids are sorted, so a binary search suffices.
  std::vector<std::int64_t> out(side_ids.size(), -1);
  for (std::size_t i = 0; i < side_ids.size(); ++i) {
    auto it = std::lower_bound(cohort_ids.begin(), cohort_ids.end(),
                               side_ids[i]);
    if (it != cohort_ids.end() && *it == side_ids[i])
      out[i] = it - cohort_ids.begin();
  }
  return out;
}

std::vector<double> row_without(const Matrix& m, std::size_t r,
                                std::int64_t drop_col) {
  std::vector<double> v;
  v.reserve(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j)
    if (static_cast<std::int64_t>(j) != drop_col) v.push_back(m(r, j));
  return v;
}

std::vector<double> col_without(const Matrix& m, std::size_t c,
                                std::int64_t drop_row) {
  std::vector<double> v;
  v.reserve(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    if (static_cast<std::int64_t>(i) != drop_row) v.push_back(m(i, c));
  return v;
}

}  // namespace

ScoreSet score_trials(const EmbeddingSet& embeddings, const TrialList& trials,
                      double eps_norm) {
  validate_embedding_set(embeddings);
  validate_trial_list(trials);
  std::vector<std::uint32_t> ai(trials.size()), bi(trials.size());
  for (std::size_t k = 0; k < trials.size(); ++k) {
    ai[k] = static_cast<std::uint32_t>(
        embeddings.index_of(trials.pairs[k].first));
    bi[k] = static_cast<std::uint32_t>(
        embeddings.index_of(trials.pairs[k].second));
  }
  ScoreSet out;
  out.trials = trials;
  kernels::cosine_pairs(embeddings.mat, embeddings.mat, ai, bi, eps_norm,
                        &out.scores);
  return out;
}

EmbeddingSet cohort_select(const EmbeddingSet& pool, std::size_t max_size,
                           std::uint64_t seed) {
  validate_embedding_set(pool);
  if (max_size == 0 || max_size > pool.size())
    throw_error(ErrorCode::kInvalidArgument,
                "cohort_select: size must be in [1, pool size]");

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pool.ids[a] < pool.ids[b];
  });
  if (pool.size() > max_size) {
    Rng rng(seed);
    rng.shuffle(order);
    order.resize(max_size);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return pool.ids[a] < pool.ids[b];
    });
  }

  EmbeddingSet out;
  out.mat = Matrix(order.size(), pool.dim());
  out.ids.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.ids.push_back(pool.ids[order[i]]);
    auto src = pool.mat.row(order[i]);
    std::copy(src.begin(), src.end(), out.mat.row(i).begin());
  }
  return out;
}

NormStats cohort_stats(std::span<const double> scores, bool adapt,
                       const AdaptiveConfig& cfg) {
  std::vector<double> v(scores.begin(), scores.end());
  if (adapt) {
    // Stable so that ties keep the caller's (id-sorted) cohort order.
    std::stable_sort(v.begin(), v.end(), std::greater<double>());
    const std::size_t drop = std::min(cfg.drop_top, v.size());
    const std::size_t keep = std::min(cfg.use_top, v.size() - drop);
    if (keep == 0)
      throw_error(ErrorCode::kInvalidArgument,
                  "cohort_stats: no scores left after trimming");
    v.assign(v.begin() + drop, v.begin() + drop + keep);
  }
  if (v.empty())
    throw_error(ErrorCode::kInvalidArgument, "cohort_stats: empty cohort");

  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  NormStats st;
  st.mean = mean;
  st.std = std::max(std::sqrt(var), kStdFloor);
  return st;
}

PairNormStats zt_stats(const Matrix& enroll_cohort, const Matrix& cohort_test,
                       const Matrix& cohort_cohort,
                       const std::vector<std::int64_t>& enroll_is_cohort,
                       const std::vector<std::int64_t>& test_is_cohort,
                       const AdaptiveConfig& cfg) {
  const std::size_t n_e = enroll_cohort.rows();
  const std::size_t n_c = enroll_cohort.cols();
  const std::size_t n_t = cohort_test.cols();
  if (cohort_test.rows() != n_c || cohort_cohort.rows() != n_c ||
      cohort_cohort.cols() != n_c || enroll_is_cohort.size() != n_e ||
      test_is_cohort.size() != n_t)
    throw_error(ErrorCode::kDimMismatch, "zt_stats: shape mismatch");

  PairNormStats out;
  out.enroll.resize(n_e);
  for (std::size_t e = 0; e < n_e; ++e)
    out.enroll[e] = cohort_stats(
        row_without(enroll_cohort, e, enroll_is_cohort[e]), cfg.adapt_z, cfg);

  // Cohort models are z-normalized against the cohort itself before the
  // test-side statistics are taken.
  Matrix zct(n_c, n_t);
  for (std::size_t c = 0; c < n_c; ++c) {
    NormStats st = cohort_stats(
        row_without(cohort_cohort, c, static_cast<std::int64_t>(c)),
        cfg.adapt_z, cfg);
    for (std::size_t t = 0; t < n_t; ++t)
      zct(c, t) = (cohort_test(c, t) - st.mean) / st.std;
  }

  out.test.resize(n_t);
  for (std::size_t t = 0; t < n_t; ++t)
    out.test[t] =
        cohort_stats(col_without(zct, t, test_is_cohort[t]), cfg.adapt_t, cfg);
  return out;
}

PairNormStats s_stats(const Matrix& enroll_cohort, const Matrix& cohort_test,
                      const std::vector<std::int64_t>& enroll_is_cohort,
                      const std::vector<std::int64_t>& test_is_cohort,
                      const AdaptiveConfig& cfg) {
  const std::size_t n_e = enroll_cohort.rows();
  const std::size_t n_c = enroll_cohort.cols();
  const std::size_t n_t = cohort_test.cols();
  if (cohort_test.rows() != n_c || enroll_is_cohort.size() != n_e ||
      test_is_cohort.size() != n_t)
    throw_error(ErrorCode::kDimMismatch, "s_stats: shape mismatch");

  PairNormStats out;
  out.enroll.resize(n_e);
  for (std::size_t e = 0; e < n_e; ++e)
    out.enroll[e] = cohort_stats(
        row_without(enroll_cohort, e, enroll_is_cohort[e]), cfg.adapt_z, cfg);
  out.test.resize(n_t);
  for (std::size_t t = 0; t < n_t; ++t)
    out.test[t] = cohort_stats(col_without(cohort_test, t, test_is_cohort[t]),
                               cfg.adapt_t, cfg);
  return out;
}

double zt_apply(double score, const NormStats& e, const NormStats& t) {
  return ((score - e.mean) / e.std - t.mean) / t.std;
}

double s_apply(double score, const NormStats& e, const NormStats& t) {
  return 0.5 * ((score - e.mean) / e.std + (score - t.mean) / t.std);
}

ScoreSet normalize_scores(const ScoreSet& raw, const EmbeddingSet& embeddings,
                          const EmbeddingSet& cohort, const NormConfig& cfg) {
  validate_score_set(raw);
  validate_embedding_set(embeddings);
  if (raw.size() == 0)
    throw_error(ErrorCode::kInvalidArgument, "normalize_scores: no trials");
  if (cohort.size() < 2)
    throw_error(ErrorCode::kInvalidArgument, "normalize_scores: cohort < 2");
  if (cohort.dim() != embeddings.dim())
    throw_error(ErrorCode::kDimMismatch, "normalize_scores: dim mismatch");

  // Canonical cohort order.
  EmbeddingSet coh = cohort_select(cohort, cohort.size(), 0);

  std::vector<std::string> enroll_ids, test_ids;
  std::vector<std::uint32_t> e_ix, t_ix;
  distinct_sides(raw.trials, true, &enroll_ids, &e_ix);
  distinct_sides(raw.trials, false, &test_ids, &t_ix);

  Matrix emb_e = gather_rows(embeddings, enroll_ids);
  Matrix emb_t = gather_rows(embeddings, test_ids);

  Matrix ec, ct, cc;
  kernels::cosine_matrix(emb_e, coh.mat, cfg.eps_norm, &ec);
  kernels::cosine_matrix(coh.mat, emb_t, cfg.eps_norm, &ct);

  std::vector<std::int64_t> e_pos = cohort_positions(enroll_ids, coh.ids);
  std::vector<std::int64_t> t_pos = cohort_positions(test_ids, coh.ids);

  PairNormStats stats;
  if (cfg.method == NormMethod::kZt) {
    kernels::cosine_matrix(coh.mat, coh.mat, cfg.eps_norm, &cc);
    stats = zt_stats(ec, ct, cc, e_pos, t_pos, cfg.adaptive);
  } else {
    stats = s_stats(ec, ct, e_pos, t_pos, cfg.adaptive);
  }

  ScoreSet out;
  out.trials = raw.trials;
  out.scores.resize(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const NormStats& se = stats.enroll[e_ix[k]];
    const NormStats& st = stats.test[t_ix[k]];
    out.scores[k] = cfg.method == NormMethod::kZt
                        ? zt_apply(raw.scores[k], se, st)
                        : s_apply(raw.scores[k], se, st);
  }
  return out;
}

ScoreSet fuse(const std::vector<ScoreSet>& sets) {
  if (sets.empty())
    throw_error(ErrorCode::kInvalidArgument, "fuse: no score sets");
  for (const auto& s : sets) validate_score_set(s);
  for (std::size_t i = 1; i < sets.size(); ++i)
    if (!(sets[i].trials == sets[0].trials))
      throw_error(ErrorCode::kDimMismatch,
                  "fuse: trial lists are not aligned");

  ScoreSet out;
  out.trials = sets[0].trials;
  out.scores.assign(sets[0].size(), 0.0);
  for (const auto& s : sets)
    for (std::size_t k = 0; k < out.scores.size(); ++k)
      out.scores[k] += s.scores[k];
  const double inv = 1.0 / static_cast<double>(sets.size());
  for (double& v : out.scores) v *= inv;
  return out;
}

}  // namespace sslsv::scoring

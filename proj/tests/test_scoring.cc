// sslsv/test_scoring.cc

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
#include <set>
#include <string>
#include <vector>

#include "sslsv/embedops.h"
#include "sslsv/rng.h"
#include "sslsv/scoring.h"
#include "sslsv/types.h"

using namespace sslsv;
using namespace sslsv::scoring;

namespace {

EmbeddingSet random_embeddings(std::size_t n, std::size_t dim,
                               std::uint64_t seed,
                               const std::string& prefix = "u") {
  Rng rng(seed);
  EmbeddingSet set;
  set.mat = Matrix(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    set.ids.push_back(prefix + std::to_string(i));
    for (std::size_t j = 0; j < dim; ++j) set.mat(i, j) = rng.gaussian();
  }
  return set;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double pop_std(const std::vector<double>& v) {
  double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

TEST_CASE("a trial of an utterance against itself scores near one") {
  EmbeddingSet set = random_embeddings(3, 8, 1);
  TrialList trials;
  trials.pairs = {{"u0", "u0"}, {"u1", "u1"}};
  ScoreSet out = score_trials(set, trials);
  REQUIRE(out.size() == 2);
  for (double s : out.scores) {
    CHECK(s > 0.999);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("orthogonal embeddings score zero") {
  EmbeddingSet set;
  set.ids = {"a", "b"};
  set.mat = Matrix(2, 2);
  set.mat(0, 0) = 2.0;
  set.mat(1, 1) = 5.0;
  TrialList trials;
  trials.pairs = {{"a", "b"}};
  ScoreSet out = score_trials(set, trials);
  CHECK(out.scores[0] == doctest::Approx(0.0));
}

TEST_CASE("trial scores match per-pair cosine computation") {
  EmbeddingSet set = random_embeddings(6, 10, 5);
  TrialList trials;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      trials.pairs.emplace_back("u" + std::to_string(i),
                                "u" + std::to_string(j));
  ScoreSet out = score_trials(set, trials);
  std::size_t t = 0;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j, ++t) {
      double want = embedops::cosine_score(set.mat.row(i), set.mat.row(j));
      CHECK(out.scores[t] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("scoring an unknown trial id fails") {
  EmbeddingSet set = random_embeddings(2, 4, 9);
  TrialList trials;
  trials.pairs = {{"u0", "missing"}};
  try {
    score_trials(set, trials);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingId);
  }
}

TEST_CASE("cohort selection is a deterministic id-ordered subsample") {
  EmbeddingSet pool = random_embeddings(20, 4, 33, "spk");
  EmbeddingSet a = cohort_select(pool, 8, 5);
  EmbeddingSet b = cohort_select(pool, 8, 5);
  CHECK(a == b);
  REQUIRE(a.size() == 8);
  CHECK(std::is_sorted(a.ids.begin(), a.ids.end()));
  // Members come from the pool with their vectors intact.
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t src = pool.index_of(a.ids[i]);
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(a.mat(i, j) == pool.mat(src, j));
  }

  EmbeddingSet c = cohort_select(pool, 8, 6);
  CHECK(c.ids != a.ids);  // another seed draws another subsample
}

TEST_CASE("cohort selection at full size keeps the whole pool") {
  EmbeddingSet pool = random_embeddings(7, 3, 21);
  EmbeddingSet all = cohort_select(pool, 7, 1);
  CHECK(all.size() == 7);
  std::set<std::string> ids(all.ids.begin(), all.ids.end());
  CHECK(ids.size() == 7);
  CHECK_THROWS_AS(cohort_select(pool, 8, 1), Error);
}

TEST_CASE("cohort selection ignores the pool's row order") {
  EmbeddingSet pool = random_embeddings(10, 3, 55);
  EmbeddingSet shuffled = pool;
  std::reverse(shuffled.ids.begin(), shuffled.ids.end());
  Matrix rev(10, 3);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 3; ++j) rev(i, j) = pool.mat(9 - i, j);
  shuffled.mat = rev;
  CHECK(cohort_select(pool, 4, 9) == cohort_select(shuffled, 4, 9));
}

TEST_CASE("cohort stats without adaptation are plain mean and std") {
  std::vector<double> scores = {0.1, 0.4, -0.2, 0.7, 0.0};
  AdaptiveConfig cfg;
  NormStats st = cohort_stats(scores, false, cfg);
  CHECK(st.mean == doctest::Approx(mean_of(scores)).epsilon(1e-12));
  CHECK(st.std == doctest::Approx(pop_std(scores)).epsilon(1e-12));
}

TEST_CASE("adaptive stats drop the top then keep the next block") {
  // Scores 1..250 shuffled; drop_top 10 leaves 240..231... keep 200 of
  // them: values 240 down to 41, mean 140.5.
  std::vector<double> scores;
  for (int i = 1; i <= 250; ++i) scores.push_back(static_cast<double>(i));
  Rng rng(2);
  rng.shuffle(scores);
  AdaptiveConfig cfg;  // drop 10, use 200
  NormStats st = cohort_stats(scores, true, cfg);
  CHECK(st.mean == doctest::Approx(140.5).epsilon(1e-12));
  std::vector<double> kept;
  for (int v = 41; v <= 240; ++v) kept.push_back(static_cast<double>(v));
  CHECK(st.std == doctest::Approx(pop_std(kept)).epsilon(1e-12));
}

TEST_CASE("adaptive stats clip the drop and keep counts to what exists") {
  std::vector<double> scores = {3.0, 1.0, 2.0};
  AdaptiveConfig cfg;
  cfg.drop_top = 1;
  cfg.use_top = 100;
  NormStats st = cohort_stats(scores, true, cfg);
  CHECK(st.mean == doctest::Approx(1.5));

  cfg.drop_top = 50;  // would drop everything; at least one must survive
  CHECK_THROWS_AS(cohort_stats(scores, true, cfg), Error);
}

TEST_CASE("identical cohort scores floor the std") {
  std::vector<double> scores = {0.3, 0.3, 0.3, 0.3};
  AdaptiveConfig cfg;
  NormStats st = cohort_stats(scores, false, cfg);
  CHECK(st.mean == doctest::Approx(0.3));
  CHECK(st.std == 1e-6);
}

TEST_CASE("zt normalization matches a from-definition oracle") {
  // 4 trial utterances, 6 cohort members, trials over all ordered pairs.
  EmbeddingSet utts = random_embeddings(4, 12, 101, "trial");
  EmbeddingSet cohort = random_embeddings(6, 12, 202, "coh");
  EmbeddingSet all;
  all.mat = Matrix(10, 12);
  for (std::size_t i = 0; i < 4; ++i) {
    all.ids.push_back(utts.ids[i]);
    for (std::size_t j = 0; j < 12; ++j) all.mat(i, j) = utts.mat(i, j);
  }
  for (std::size_t i = 0; i < 6; ++i) {
    all.ids.push_back(cohort.ids[i]);
    for (std::size_t j = 0; j < 12; ++j) all.mat(4 + i, j) = cohort.mat(i, j);
  }

  TrialList trials;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (i != j) trials.pairs.emplace_back(utts.ids[i], utts.ids[j]);
  ScoreSet raw = score_trials(all, trials);

  NormConfig cfg;
  cfg.method = NormMethod::kZt;
  cfg.adaptive.adapt_z = false;
  cfg.adaptive.adapt_t = false;
  ScoreSet normed = normalize_scores(raw, all, cohort, cfg);

  // Oracle, straight from the definition.  Cohort rows are ordered by id.
  std::vector<std::size_t> coh_order;
  {
    std::vector<std::string> ids = cohort.ids;
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) coh_order.push_back(cohort.index_of(id));
  }
  auto cos = [&](std::span<const double> x, std::span<const double> y) {
    return embedops::cosine_score(x, y);
  };
  // Z step: each trial side against the cohort.
  auto z_stats_of = [&](std::size_t u) {
    std::vector<double> s;
    for (auto c : coh_order) s.push_back(cos(utts.mat.row(u), cohort.mat.row(c)));
    return std::pair<double, double>(mean_of(s),
                                     std::max(pop_std(s), 1e-6));
  };
  // T step statistics per test utterance: z-normalized cohort-vs-test
  // scores, each cohort row normalized by its own cohort-vs-cohort stats
  // (self excluded).
  auto t_stats_of = [&](std::size_t u) {
    std::vector<double> zscores;
    for (std::size_t ci = 0; ci < coh_order.size(); ++ci) {
      std::vector<double> cc;
      for (std::size_t cj = 0; cj < coh_order.size(); ++cj)
        if (cj != ci)
          cc.push_back(cos(cohort.mat.row(coh_order[ci]),
                           cohort.mat.row(coh_order[cj])));
      double mu = mean_of(cc);
      double sd = std::max(pop_std(cc), 1e-6);
      double raw_ct = cos(cohort.mat.row(coh_order[ci]), utts.mat.row(u));
      zscores.push_back((raw_ct - mu) / sd);
    }
    return std::pair<double, double>(mean_of(zscores),
                                     std::max(pop_std(zscores), 1e-6));
  };

  for (std::size_t t = 0; t < trials.size(); ++t) {
    std::size_t e = utts.index_of(trials.pairs[t].first);
    std::size_t u = utts.index_of(trials.pairs[t].second);
    auto [ze_mu, ze_sd] = z_stats_of(e);
    auto [tt_mu, tt_sd] = t_stats_of(u);
    double want = ((raw.scores[t] - ze_mu) / ze_sd - tt_mu) / tt_sd;
    CHECK(std::abs(normed.scores[t] - want) < 1e-9);
  }
}

TEST_CASE("s-norm averages the two sides and is symmetric") {
  EmbeddingSet utts = random_embeddings(4, 10, 303, "trial");
  EmbeddingSet cohort = random_embeddings(8, 10, 404, "coh");
  EmbeddingSet all;
  all.mat = Matrix(12, 10);
  for (std::size_t i = 0; i < 4; ++i) {
    all.ids.push_back(utts.ids[i]);
    for (std::size_t j = 0; j < 10; ++j) all.mat(i, j) = utts.mat(i, j);
  }
  for (std::size_t i = 0; i < 8; ++i) {
    all.ids.push_back(cohort.ids[i]);
    for (std::size_t j = 0; j < 10; ++j) all.mat(4 + i, j) = cohort.mat(i, j);
  }

  TrialList fwd, rev;
  fwd.pairs = {{"trial0", "trial1"}, {"trial2", "trial3"}};
  rev.pairs = {{"trial1", "trial0"}, {"trial3", "trial2"}};
  NormConfig cfg;
  cfg.method = NormMethod::kS;
  cfg.adaptive.adapt_z = false;
  cfg.adaptive.adapt_t = false;
  ScoreSet nf = normalize_scores(score_trials(all, fwd), all, cohort, cfg);
  ScoreSet nr = normalize_scores(score_trials(all, rev), all, cohort, cfg);
  for (std::size_t i = 0; i < nf.size(); ++i)
    CHECK(nf.scores[i] == doctest::Approx(nr.scores[i]).epsilon(1e-12));

  // And it matches the two-sided definition.
  auto side_stats = [&](std::size_t u) {
    std::vector<double> s;
    std::vector<std::string> ids = cohort.ids;
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids)
      s.push_back(embedops::cosine_score(
          utts.mat.row(u), cohort.mat.row(cohort.index_of(id))));
    return std::pair<double, double>(mean_of(s),
                                     std::max(pop_std(s), 1e-6));
  };
  ScoreSet raw = score_trials(all, fwd);
  for (std::size_t t = 0; t < fwd.size(); ++t) {
    auto [me, se] = side_stats(utts.index_of(fwd.pairs[t].first));
    auto [mt, st] = side_stats(utts.index_of(fwd.pairs[t].second));
    double want =
        0.5 * ((raw.scores[t] - me) / se + (raw.scores[t] - mt) / st);
    CHECK(std::abs(nf.scores[t] - want) < 1e-9);
  }
}

TEST_CASE("normalized scores ignore the cohort's row order") {
  EmbeddingSet all = random_embeddings(12, 8, 77);
  EmbeddingSet cohort;
  for (std::size_t i = 4; i < 12; ++i) {
    cohort.ids.push_back(all.ids[i]);
  }
  cohort.mat = Matrix(8, 8);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) cohort.mat(i, j) = all.mat(4 + i, j);
  EmbeddingSet reversed;
  for (std::size_t i = 0; i < 8; ++i) {
    reversed.ids.push_back(cohort.ids[7 - i]);
  }
  reversed.mat = Matrix(8, 8);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      reversed.mat(i, j) = cohort.mat(7 - i, j);

  TrialList trials;
  trials.pairs = {{"u0", "u1"}, {"u2", "u3"}, {"u0", "u3"}};
  ScoreSet raw = score_trials(all, trials);
  for (NormMethod m : {NormMethod::kZt, NormMethod::kS}) {
    NormConfig cfg;
    cfg.method = m;
    cfg.adaptive.drop_top = 2;
    cfg.adaptive.use_top = 4;
    ScoreSet a = normalize_scores(raw, all, cohort, cfg);
    ScoreSet b = normalize_scores(raw, all, reversed, cfg);
    CHECK(a == b);
  }
}

TEST_CASE("a cohort member appearing in a trial is excluded from its side") {
  EmbeddingSet all = random_embeddings(10, 6, 88);
  // Cohort = utterances 2..9; trials involve u2 which is also in the
  // cohort.  u2's own sides must use the 7 other members only, while a
  // side like u0 sees all 8.
  EmbeddingSet cohort;
  cohort.mat = Matrix(8, 6);
  for (std::size_t i = 0; i < 8; ++i) {
    cohort.ids.push_back(all.ids[2 + i]);
    for (std::size_t j = 0; j < 6; ++j) cohort.mat(i, j) = all.mat(2 + i, j);
  }

  TrialList trials;
  trials.pairs = {{"u2", "u0"}, {"u1", "u2"}};
  ScoreSet raw = score_trials(all, trials);
  NormConfig cfg;
  cfg.method = NormMethod::kS;
  cfg.adaptive.adapt_z = false;
  cfg.adaptive.adapt_t = false;
  ScoreSet normed = normalize_scores(raw, all, cohort, cfg);

  auto side_stats = [&](const std::string& id, bool exclude_self) {
    std::vector<double> s;
    std::vector<std::string> ids = cohort.ids;
    std::sort(ids.begin(), ids.end());
    std::size_t u = all.index_of(id);
    for (const auto& cid : ids) {
      if (exclude_self && cid == id) continue;
      s.push_back(embedops::cosine_score(
          all.mat.row(u), all.mat.row(all.index_of(cid))));
    }
    return std::pair<double, double>(mean_of(s),
                                     std::max(pop_std(s), 1e-6));
  };
  for (std::size_t t = 0; t < trials.size(); ++t) {
    auto [me, se] = side_stats(trials.pairs[t].first, true);
    auto [mt, st] = side_stats(trials.pairs[t].second, true);
    double want =
        0.5 * ((raw.scores[t] - me) / se + (raw.scores[t] - mt) / st);
    CHECK(std::abs(normed.scores[t] - want) < 1e-9);
  }
}

TEST_CASE("normalization is invariant to affine shifts of the raw scores") {
  // zt_apply and s_apply on stats computed from shifted+scaled score
  // lists reduce to the same normalized value.
  std::vector<double> cohort_scores = {0.2, -0.1, 0.45, 0.3, 0.05, -0.3};
  AdaptiveConfig acfg;
  const double a = 3.7, b = -1.25;
  std::vector<double> transformed;
  for (double s : cohort_scores) transformed.push_back(a * s + b);
  NormStats st0 = cohort_stats(cohort_scores, false, acfg);
  NormStats st1 = cohort_stats(transformed, false, acfg);
  for (double raw : {0.1, 0.33, -0.2}) {
    double z0 = (raw - st0.mean) / st0.std;
    double z1 = (a * raw + b - st1.mean) / st1.std;
    CHECK(std::abs(z0 - z1) < 1e-9);
  }
}

TEST_CASE("zt and s apply match their formulas") {
  NormStats e{0.5, 2.0};
  NormStats t{-1.0, 4.0};
  CHECK(zt_apply(3.0, e, t) ==
        doctest::Approx(((3.0 - 0.5) / 2.0 + 1.0) / 4.0).epsilon(1e-15));
  CHECK(s_apply(3.0, e, t) ==
        doctest::Approx(0.5 * ((3.0 - 0.5) / 2.0 + (3.0 + 1.0) / 4.0))
            .epsilon(1e-15));
}

TEST_CASE("fusion averages aligned score sets") {
  TrialList trials;
  trials.pairs = {{"a", "b"}, {"c", "d"}};
  trials.labels = std::vector<std::uint8_t>{1, 0};
  ScoreSet s1{trials, {1.0, -1.0}};
  ScoreSet s2{trials, {3.0, 0.0}};
  ScoreSet s3{trials, {2.0, 1.0}};
  ScoreSet fused = fuse({s1, s2, s3});
  CHECK(fused.trials == trials);
  CHECK(fused.scores[0] == doctest::Approx(2.0));
  CHECK(fused.scores[1] == doctest::Approx(0.0));

  ScoreSet alone = fuse({s1});
  CHECK(alone == s1);
}

TEST_CASE("fusion rejects misaligned trial lists") {
  TrialList t1, t2;
  t1.pairs = {{"a", "b"}};
  t2.pairs = {{"b", "a"}};
  ScoreSet s1{t1, {1.0}};
  ScoreSet s2{t2, {2.0}};
  CHECK_THROWS_AS(fuse({s1, s2}), Error);
  CHECK_THROWS_AS(fuse({}), Error);
}

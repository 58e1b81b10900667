// sslsv/test_losses.cc

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

#include <cmath>
#include <vector>

#include "sslsv/losses.h"
#include "sslsv/rng.h"
#include "sslsv/types.h"

using namespace sslsv;
using namespace sslsv::losses;

namespace {

// Central finite difference of a scalar function of one coordinate.
template <typename F>
double fd(F f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

double rel_err(double got, double want) {
  double denom = std::max(std::abs(want), 1e-8);
  return std::abs(got - want) / denom;
}

}  // namespace

TEST_CASE("margin_logit known values") {
  MarginConfig cfg;  // s = 40, m = 0.2, subtractive
  CHECK(margin_logit(0.5, true, cfg) == doctest::Approx(40.0 * 0.3));
  CHECK(margin_logit(0.5, false, cfg) == doctest::Approx(20.0));

  MarginConfig ang = cfg;
  ang.variant = MarginVariant::kAngular;
  CHECK(margin_logit(0.5, true, ang) ==
        doctest::Approx(40.0 * std::cos(std::acos(0.5) + 0.2)));
  CHECK(margin_logit(0.5, false, ang) == doctest::Approx(20.0));
}

TEST_CASE("margin_logit with zero margin ignores the variant") {
  MarginConfig a;
  a.margin = 0.0;
  MarginConfig b = a;
  b.variant = MarginVariant::kAngular;
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    double c = rng.uniform(-1.0, 1.0);
    CHECK(std::abs(margin_logit(c, true, a) - margin_logit(c, true, b)) <
          1e-12);
  }
}

TEST_CASE("margin_logit rejects cosines far outside the valid range") {
  MarginConfig cfg;
  CHECK_THROWS_AS(margin_logit(1.5, true, cfg), Error);
  CHECK_THROWS_AS(margin_logit(-1.5, false, cfg), Error);
  // Tiny numeric excursions are clamped, not rejected.
  CHECK(margin_logit(1.0 + 5e-7, false, cfg) == doctest::Approx(40.0));
}

TEST_CASE("margin_logit_grad matches finite differences") {
  Rng rng(2);
  for (int i = 0; i < 300; ++i) {
    MarginConfig cfg;
    cfg.scale = rng.uniform(1.0, 50.0);
    cfg.margin = rng.uniform(0.0, 0.4);
    cfg.variant =
        rng.uniform() < 0.5 ? MarginVariant::kSubtractive : MarginVariant::kAngular;
    bool target = rng.uniform() < 0.5;
    double c = rng.uniform(-0.95, 0.95);
    double got = margin_logit_grad(c, target, cfg);
    double want =
        fd([&](double x) { return margin_logit(x, target, cfg); }, c);
    CHECK(rel_err(got, want) < 1e-4);
  }
}

TEST_CASE("softmax_ce value and gradient on a known case") {
  std::vector<double> z = {1.0, 2.0, 3.0};
  LossResult res = softmax_ce(z, 2);
  double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(res.loss == doctest::Approx(lse - 3.0));
  double sum = 0.0;
  for (double g : res.grad) sum += g;
  CHECK(std::abs(sum) < 1e-12);
  CHECK(res.grad[2] < 0.0);
  CHECK(res.grad[0] > 0.0);
}

TEST_CASE("softmax_ce is shift-invariant") {
  std::vector<double> z = {100.0, 101.0, 99.5};
  std::vector<double> zs = {0.0, 1.0, -0.5};
  LossResult a = softmax_ce(z, 1);
  LossResult b = softmax_ce(zs, 1);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(a.grad[k] == doctest::Approx(b.grad[k]).epsilon(1e-12));
}

TEST_CASE("log_t and exp_t invert each other and reduce at t=1") {
  CHECK(log_t(1.0, 0.7) == 0.0);
  CHECK(exp_t(0.0, 1.3) == 1.0);
  CHECK(log_t(2.5, 1.0) == doctest::Approx(std::log(2.5)));
  CHECK(exp_t(0.3, 1.0) == doctest::Approx(std::exp(0.3)));
  for (double t : {0.5, 0.9, 1.1, 1.5}) {
    for (double x : {0.1, 0.5, 1.0, 2.0, 5.0}) {
      CHECK(exp_t(log_t(x, t), t) == doctest::Approx(x).epsilon(1e-10));
    }
  }
}

TEST_CASE("tempered_softmax probabilities sum to one") {
  Rng rng(3);
  BiTemperedConfig cfg;
  for (int i = 0; i < 100; ++i) {
    std::size_t n = 2 + rng.uniform_int(8);
    std::vector<double> z(n);
    for (auto& v : z) v = rng.uniform(-10.0, 10.0);
    TemperedSoftmax ts = tempered_softmax(z, cfg);
    double sum = 0.0;
    for (double p : ts.probs) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("tempered_softmax at t2=1 equals the plain softmax") {
  BiTemperedConfig cfg;
  cfg.t2 = 1.0;
  std::vector<double> z = {0.5, -1.0, 2.0, 0.0};
  TemperedSoftmax ts = tempered_softmax(z, cfg);
  double lse = 0.0;
  double zmax = 2.0;
  for (double v : z) lse += std::exp(v - zmax);
  lse = zmax + std::log(lse);
  for (std::size_t k = 0; k < z.size(); ++k)
    CHECK(ts.probs[k] == doctest::Approx(std::exp(z[k] - lse)).epsilon(1e-12));
}

TEST_CASE("bitempered_loss reduces to cross-entropy at unit temperatures") {
  Rng rng(4);
  BiTemperedConfig cfg;
  cfg.t1 = 1.0;
  cfg.t2 = 1.0;
  for (int i = 0; i < 200; ++i) {
    std::size_t n = 2 + rng.uniform_int(9);
    std::vector<double> z(n);
    for (auto& v : z) v = rng.uniform(-8.0, 8.0);
    std::size_t target = rng.uniform_int(n);
    LossResult bt = bitempered_loss(z, target, cfg);
    LossResult ce = softmax_ce(z, target);
    CHECK(std::abs(bt.loss - ce.loss) < 1e-9);
    for (std::size_t k = 0; k < n; ++k)
      CHECK(std::abs(bt.grad[k] - ce.grad[k]) < 1e-9);
  }
}

TEST_CASE("bitempered_loss gradient matches finite differences") {
  Rng rng(5);
  BiTemperedConfig cfg;  // t1 = 0.9, t2 = 1.1
  // The difference quotient resolves ~1e-7 per loss evaluation, so the
  // normalizer must be solved well below that or its noise shows up as a
  // fake gradient error on small components.
  cfg.lambda_tol = 1e-15;
  for (int i = 0; i < 120; ++i) {
    std::size_t n = 2 + rng.uniform_int(6);
    std::vector<double> z(n);
    for (auto& v : z) v = rng.uniform(-4.0, 4.0);
    std::size_t target = rng.uniform_int(n);
    LossResult res = bitempered_loss(z, target, cfg);
    for (std::size_t k = 0; k < n; ++k) {
      double want = fd(
          [&](double x) {
            std::vector<double> zz = z;
            zz[k] = x;
            return bitempered_loss(zz, target, cfg).loss;
          },
          z[k], 1e-5);
      CHECK(rel_err(res.grad[k], want) < 1e-4);
    }
  }
}

TEST_CASE("bitempered_loss is bounded for extreme outlier logits") {
  // The heavy-tail temperatures keep a single wild logit from dominating
  // the way it would under plain cross-entropy.
  BiTemperedConfig cfg;
  std::vector<double> mild = {2.0, 0.0, -2.0};
  std::vector<double> wild = {2.0, 0.0, -2000.0};
  double l_mild = bitempered_loss(mild, 0, cfg).loss;
  double l_wild = bitempered_loss(wild, 0, cfg).loss;
  CHECK(std::isfinite(l_wild));
  CHECK(std::abs(l_wild - l_mild) < 1.0);

  LossResult ce = softmax_ce(wild, 2);
  CHECK(ce.loss > 1000.0);  // cross-entropy explodes on the same case
}

TEST_CASE("moco_infonce separates aligned from misaligned queries") {
  ContrastiveConfig cfg;
  Matrix queue(3, 4);
  Rng rng(6);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) queue(r, c) = rng.gaussian();
  std::vector<double> key = {1.0, 0.0, 0.0, 0.0};
  std::vector<double> aligned = {0.9, 0.1, 0.0, 0.0};
  std::vector<double> misaligned = {-0.9, 0.1, 0.0, 0.0};
  double l_aligned = moco_infonce(aligned, key, queue, cfg).loss;
  double l_misaligned = moco_infonce(misaligned, key, queue, cfg).loss;
  CHECK(l_aligned < l_misaligned);
}

TEST_CASE("moco_infonce empty queue has zero loss") {
  ContrastiveConfig cfg;
  Matrix queue;
  std::vector<double> q = {0.5, 0.5};
  std::vector<double> k = {1.0, 0.0};
  MocoResult res = moco_infonce(q, k, queue, cfg);
  CHECK(res.loss == 0.0);
}

TEST_CASE("moco_infonce query gradient matches finite differences") {
  Rng rng(7);
  ContrastiveConfig cfg;
  for (int i = 0; i < 120; ++i) {
    std::size_t dim = 3 + rng.uniform_int(5);
    std::size_t nq = 1 + rng.uniform_int(6);
    Matrix queue(nq, dim);
    for (std::size_t r = 0; r < nq; ++r)
      for (std::size_t c = 0; c < dim; ++c) queue(r, c) = rng.gaussian();
    std::vector<double> query = rng.gaussian_vector(dim);
    std::vector<double> key = rng.gaussian_vector(dim);
    MocoResult res = moco_infonce(query, key, queue, cfg);
    for (std::size_t k = 0; k < dim; ++k) {
      double want = fd(
          [&](double x) {
            std::vector<double> qq = query;
            qq[k] = x;
            return moco_infonce(qq, key, queue, cfg).loss;
          },
          query[k], 1e-5);
      CHECK(rel_err(res.query_grad[k], want) < 1e-4);
    }
  }
}

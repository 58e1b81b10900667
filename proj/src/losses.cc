// sslsv/losses.cc

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

#include "sslsv/losses.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sslsv/embedops.h"

namespace sslsv::losses {

namespace {

constexpr double kCosClampTol = 1e-6;

void check_finite_span(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x))
      throw_error(ErrorCode::kNonFinite, std::string(what) + ": non-finite input");
}

}  // namespace

double margin_logit(double cos_theta, bool is_target, const MarginConfig& cfg) {
  if (!std::isfinite(cos_theta) || std::abs(cos_theta) > 1.0 + kCosClampTol)
    throw_error(ErrorCode::kInvalidArgument,
                "margin_logit: cosine outside [-1,1]");
  double c = std::clamp(cos_theta, -1.0, 1.0);
  if (!is_target) return cfg.scale * c;
  if (cfg.variant == MarginVariant::kSubtractive)
    return cfg.scale * (c - cfg.margin);
  double theta = std::acos(c);
  return cfg.scale * std::cos(theta + cfg.margin);
}

double margin_logit_grad(double cos_theta, bool is_target,
                         const MarginConfig& cfg) {
  if (!std::isfinite(cos_theta) || std::abs(cos_theta) > 1.0 + kCosClampTol)
    throw_error(ErrorCode::kInvalidArgument,
                "margin_logit_grad: cosine outside [-1,1]");
  if (!is_target || cfg.variant == MarginVariant::kSubtractive)
    return cfg.scale;
  double c = std::clamp(cos_theta, -1.0, 1.0);
  double theta = std::acos(c);
  double sin_theta = std::sqrt(std::max(1.0 - c * c, 1e-24));
  return cfg.scale * std::sin(theta + cfg.margin) / sin_theta;
}

LossResult softmax_ce(std::span<const double> logits, std::size_t target) {
  check_finite_span(logits, "softmax_ce");
  if (target >= logits.size())
    throw_error(ErrorCode::kInvalidArgument, "softmax_ce: target out of range");
  double zmax = -std::numeric_limits<double>::infinity();
  for (double z : logits) zmax = std::max(zmax, z);
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - zmax);
  LossResult res;
  res.loss = std::log(denom) + zmax - logits[target];
  res.grad.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k)
    res.grad[k] = std::exp(logits[k] - zmax) / denom;
  res.grad[target] -= 1.0;
  return res;
}

double log_t(double x, double t) {
  if (t == 1.0) return std::log(x);
  // (x^(1-t) - 1) / (1-t), stable for t near 1.
  return std::expm1((1.0 - t) * std::log(x)) / (1.0 - t);
}

double exp_t(double x, double t) {
  if (t == 1.0) return std::exp(x);
  double base = 1.0 + (1.0 - t) * x;
  if (base <= 0.0) {
    // Truncation for t < 1; for t > 1 the function diverges at the
    // boundary of its domain.
    return t < 1.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return std::exp(std::log1p((1.0 - t) * x) / (1.0 - t));
}

TemperedSoftmax tempered_softmax(std::span<const double> logits,
                                 const BiTemperedConfig& cfg) {
  check_finite_span(logits, "tempered_softmax");
  if (logits.empty())
    throw_error(ErrorCode::kInvalidArgument, "tempered_softmax: empty logits");
  TemperedSoftmax out;
  out.probs.resize(logits.size());

  double zmax = -std::numeric_limits<double>::infinity();
  for (double z : logits) zmax = std::max(zmax, z);

  if (cfg.t2 == 1.0) {
    // lambda = logsumexp(z) in closed form.
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z - zmax);
    out.lambda = std::log(denom) + zmax;
    for (std::size_t k = 0; k < logits.size(); ++k)
      out.probs[k] = std::exp(logits[k] - out.lambda);
    return out;
  }

  auto residual = [&](double lambda) {
    double s = 0.0;
    for (double z : logits) s += exp_t(z - lambda, cfg.t2);
    return s - 1.0;
  };

  // The mass at lambda = max(z) is at least 1, so the root lies above;
  // widen the bracket upward until the residual changes sign.
  double lo = zmax - 1.0, hi = zmax;
  double width = 1.0;
  while (residual(hi) > 0.0) {
    lo = hi;
    hi += width;
    width *= 2.0;
    if (!std::isfinite(hi))
      throw_error(ErrorCode::kNoConvergence,
                  "tempered_softmax: bracket widening failed");
  }
  for (int it = 0; it < cfg.lambda_iters && hi - lo > cfg.lambda_tol; ++it) {
    double mid = 0.5 * (lo + hi);
    if (residual(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  double lambda = 0.5 * (lo + hi);
  double resid = residual(lambda);
  if (std::abs(resid) > 1e-8)
    throw_error(ErrorCode::kNoConvergence,
                "tempered_softmax: lambda search residual " +
                    std::to_string(resid));
  out.lambda = lambda;
  for (std::size_t k = 0; k < logits.size(); ++k)
    out.probs[k] = exp_t(logits[k] - lambda, cfg.t2);
  return out;
}

LossResult bitempered_loss(std::span<const double> logits, std::size_t target,
                           const BiTemperedConfig& cfg) {
  if (target >= logits.size())
    throw_error(ErrorCode::kInvalidArgument,
                "bitempered_loss: target out of range");
  auto ts = tempered_softmax(logits, cfg);
  const auto& p = ts.probs;
  const double t1 = cfg.t1, t2 = cfg.t2;

  LossResult res;
  double sum_pow = 0.0;
  for (double pk : p) sum_pow += std::pow(pk, 2.0 - t1);
  res.loss = -log_t(p[target], t1) - 1.0 / (2.0 - t1) + sum_pow / (2.0 - t1);

  // dL/dz_j = g_j - [j==c] h - q_j (sum_k g_k - h), with
  //   g_k = p_k^(1 - t1 + t2),  h = p_c^(t2 - t1),  q_j = p_j^t2 / sum p^t2.
  std::vector<double> g(p.size()), pt2(p.size());
  double sum_g = 0.0, sum_pt2 = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    g[k] = std::pow(p[k], 1.0 - t1 + t2);
    pt2[k] = std::pow(p[k], t2);
    sum_g += g[k];
    sum_pt2 += pt2[k];
  }
  double h = std::pow(p[target], t2 - t1);
  double s = sum_g - h;
  res.grad.resize(p.size());
  for (std::size_t j = 0; j < p.size(); ++j)
    res.grad[j] = g[j] - (pt2[j] / sum_pt2) * s;
  res.grad[target] -= h;
  return res;
}

MocoResult moco_infonce(std::span<const double> query,
                        std::span<const double> positive_key,
                        const Matrix& queue, const ContrastiveConfig& cfg,
                        double eps_norm) {
  if (query.size() != positive_key.size() ||
      (queue.rows() > 0 && queue.cols() != query.size()))
    throw_error(ErrorCode::kDimMismatch, "moco_infonce: dim mismatch");
  const std::size_t d = query.size();
  const std::size_t n_neg = queue.rows();

  std::vector<double> logits(1 + n_neg);
  logits[0] = cfg.scale * embedops::cosine_score(query, positive_key, eps_norm);
  for (std::size_t i = 0; i < n_neg; ++i)
    logits[1 + i] =
        cfg.scale * embedops::cosine_score(query, queue.row(i), eps_norm);

  auto ce = softmax_ce(logits, 0);

  // d cos(q, v) / dq = (v_hat - cos * q_hat) / sqrt(|q|^2 + eps)
  double nq2 = eps_norm;
  for (double v : query) nq2 += v * v;
  double nq = std::sqrt(nq2);

  MocoResult res;
  res.loss = ce.loss;
  res.query_grad.assign(d, 0.0);
  auto accumulate = [&](std::span<const double> key, double cos_val,
                        double weight) {
    double nk2 = eps_norm;
    for (double v : key) nk2 += v * v;
    double nk = std::sqrt(nk2);
    double coef = weight * cfg.scale / nq;
    for (std::size_t k = 0; k < d; ++k)
      res.query_grad[k] += coef * (key[k] / nk - cos_val * query[k] / nq);
  };
  accumulate(positive_key, logits[0] / cfg.scale, ce.grad[0]);
  for (std::size_t i = 0; i < n_neg; ++i)
    accumulate(queue.row(i), logits[1 + i] / cfg.scale, ce.grad[1 + i]);
  return res;
}

}  // namespace sslsv::losses

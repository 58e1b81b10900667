// sslsv/embedops.cc

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

#include "sslsv/embedops.h"

#include <algorithm>
#include <cmath>

namespace sslsv::embedops {

namespace {

void check_finite(std::span<const double> x, const char* what) {
  for (double v : x)
    if (!std::isfinite(v))
      throw_error(ErrorCode::kNonFinite,
                  std::string(what) + ": non-finite input");
}

}  // namespace

std::vector<double> length_normalize(std::span<const double> x,
                                     double eps_norm) {
  check_finite(x, "length_normalize");
  double s = eps_norm;
  for (double v : x) s += v * v;
  double inv = 1.0 / std::sqrt(s);
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] * inv;
  return out;
}

void length_normalize_rows(Matrix* m, double eps_norm) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m->rows()); ++i) {
    auto row = m->row(i);
    double s = eps_norm;
    for (double v : row) s += v * v;
    double inv = 1.0 / std::sqrt(s);
    for (double& v : row) v *= inv;
  }
}

double cosine_score(std::span<const double> a, std::span<const double> b,
                    double eps_norm) {
  if (a.size() != b.size())
    throw_error(ErrorCode::kDimMismatch, "cosine_score: dim mismatch");
  check_finite(a, "cosine_score");
  check_finite(b, "cosine_score");
  double sa = eps_norm, sb = eps_norm, dot = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sa += a[k] * a[k];
    sb += b[k] * b[k];
    dot += a[k] * b[k];
  }
  return dot / (std::sqrt(sa) * std::sqrt(sb));
}

std::vector<double> stats_pool(const Matrix& frames, double eps_pool,
                               PoolVariant variant) {
  const std::size_t t = frames.rows(), f = frames.cols();
  if (t == 0)
    throw_error(ErrorCode::kInvalidArgument, "stats_pool: empty frame sequence");
  std::vector<double> out(2 * f);
  for (std::size_t j = 0; j < f; ++j) {
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      double v = frames(i, j);
      sum += v;
      sum2 += v * v;
    }
    double mean = sum / static_cast<double>(t);
    double var = sum2 / static_cast<double>(t) - mean * mean;
    double sigma = variant == PoolVariant::kClamp
                       ? std::sqrt(std::max(var, eps_pool))
                       : std::sqrt(var + eps_pool);
    out[j] = mean;
    out[f + j] = sigma;
  }
  return out;
}

Matrix sliding_cmn(const Matrix& features, std::size_t window) {
  if (window < 1)
    throw_error(ErrorCode::kInvalidArgument, "sliding_cmn: window must be >= 1");
  const std::size_t t = features.rows(), f = features.cols();
  Matrix out(t, f);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ti = 0; ti < static_cast<std::ptrdiff_t>(t); ++ti) {
    // Nominal window [ti - (w-1)/2, ti + w - (w-1)/2), shifted inward at
    // the edges so it keeps min(window, T) frames.
    std::ptrdiff_t lo = ti - static_cast<std::ptrdiff_t>((window - 1) / 2);
    std::ptrdiff_t hi = lo + static_cast<std::ptrdiff_t>(window);
    if (lo < 0) {
      lo = 0;
      hi = std::min<std::ptrdiff_t>(window, t);
    } else if (hi > static_cast<std::ptrdiff_t>(t)) {
      hi = static_cast<std::ptrdiff_t>(t);
      lo = std::max<std::ptrdiff_t>(0, hi - static_cast<std::ptrdiff_t>(window));
    }
    const double n = static_cast<double>(hi - lo);
    for (std::size_t j = 0; j < f; ++j) {
      double sum = 0.0;
      for (std::ptrdiff_t i = lo; i < hi; ++i) sum += features(i, j);
      out(ti, j) = features(ti, j) - sum / n;
    }
  }
  return out;
}

MvnStats compute_mvn_stats(const Matrix& dataset) {
  const std::size_t n = dataset.rows(), f = dataset.cols();
  if (n == 0)
    throw_error(ErrorCode::kInvalidArgument, "compute_mvn_stats: empty dataset");
  MvnStats stats;
  stats.mean.resize(f);
  stats.std.resize(f);
  for (std::size_t j = 0; j < f; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += dataset(i, j);
    double mean = sum / static_cast<double>(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = dataset(i, j) - mean;
      acc += d * d;
    }
    double sd = std::sqrt(acc / static_cast<double>(n));
    stats.mean[j] = mean;
    stats.std[j] = sd < 1e-8 ? 1.0 : sd;
  }
  return stats;
}

Matrix global_mvn(const Matrix& features, const MvnStats& stats) {
  if (features.cols() != stats.mean.size())
    throw_error(ErrorCode::kDimMismatch, "global_mvn: dim mismatch");
  Matrix out(features.rows(), features.cols());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(features.rows());
       ++i)
    for (std::size_t j = 0; j < features.cols(); ++j)
      out(i, j) = (features(i, j) - stats.mean[j]) / stats.std[j];
  return out;
}

}  // namespace sslsv::embedops

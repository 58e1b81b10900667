// sslsv/kernels.cc

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

#include "sslsv/kernels.h"

#include <cmath>
#include <limits>

namespace sslsv::kernels {

namespace {

// dot / (sqrt(|a|^2+eps) * sqrt(|b|^2+eps)); the per-row inverse norms are
// precomputed by the matrix kernels.
inline double row_dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += a[k] * b[k];
  return acc;
}

inline double inv_stab_norm(const double* a, std::size_t n, double eps) {
  double s = eps;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * a[k];
  return 1.0 / std::sqrt(s);
}

std::vector<double> inv_norms(const Matrix& m, double eps) {
  std::vector<double> out(m.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m.rows()); ++i)
    out[i] = inv_stab_norm(m.row(i).data(), m.cols(), eps);
  return out;
}

std::vector<double> inv_norms_serial(const Matrix& m, double eps) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    out[i] = inv_stab_norm(m.row(i).data(), m.cols(), eps);
  return out;
}

double blocked_sum_impl(const std::vector<double>& v) {
  const std::size_t n = v.size();
  const std::size_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
  std::vector<double> partial(nblocks, 0.0);
  for (std::size_t b = 0; b < nblocks; ++b) {
    double acc = 0.0;
    std::size_t end = std::min(n, (b + 1) * kReduceBlock);
    for (std::size_t i = b * kReduceBlock; i < end; ++i) acc += v[i];
    partial[b] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

double blocked_sum_parallel(const std::vector<double>& v) {
  const std::size_t n = v.size();
  const std::size_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
  std::vector<double> partial(nblocks, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(nblocks); ++b) {
    double acc = 0.0;
    std::size_t end = std::min(n, static_cast<std::size_t>(b + 1) * kReduceBlock);
    for (std::size_t i = static_cast<std::size_t>(b) * kReduceBlock; i < end; ++i)
      acc += v[i];
    partial[b] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

inline void nearest_one(const Matrix& points, const Matrix& centroids,
                        std::size_t i, std::uint32_t* assign, double* dist2) {
  const std::size_t d = points.cols();
  const double* p = points.row(i).data();
  double best = std::numeric_limits<double>::infinity();
  std::uint32_t best_k = 0;
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    const double* c = centroids.row(k).data();
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double diff = p[j] - c[j];
      acc += diff * diff;
    }
    if (acc < best) {
      best = acc;
      best_k = static_cast<std::uint32_t>(k);
    }
  }
  *assign = best_k;
  *dist2 = best;
}

}  // namespace

double blocked_sum(const std::vector<double>& v) {
  return blocked_sum_parallel(v);
}

void cosine_matrix(const Matrix& a, const Matrix& b, double eps_norm,
                   Matrix* out) {
  SSLSV_CHECK(a.cols() == b.cols(), "cosine_matrix: dim mismatch");
  *out = Matrix(a.rows(), b.rows());
  auto ia = inv_norms(a, eps_norm);
  auto ib = inv_norms(b, eps_norm);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(a.rows()); ++i) {
    const double* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j)
      (*out)(i, j) = row_dot(ar, b.row(j).data(), a.cols()) * ia[i] * ib[j];
  }
}

void cosine_pairs(const Matrix& a, const Matrix& b,
                  const std::vector<std::uint32_t>& ai,
                  const std::vector<std::uint32_t>& bi, double eps_norm,
                  std::vector<double>* out) {
  SSLSV_CHECK(a.cols() == b.cols(), "cosine_pairs: dim mismatch");
  SSLSV_CHECK(ai.size() == bi.size(), "cosine_pairs: index size mismatch");
  out->assign(ai.size(), 0.0);
  auto ia = inv_norms(a, eps_norm);
  auto ib = inv_norms(b, eps_norm);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(ai.size()); ++k) {
    (*out)[k] = row_dot(a.row(ai[k]).data(), b.row(bi[k]).data(), a.cols()) *
                ia[ai[k]] * ib[bi[k]];
  }
}

double nearest_centroid(const Matrix& points, const Matrix& centroids,
                        std::vector<std::uint32_t>* assign,
                        std::vector<double>* dist2) {
  SSLSV_CHECK(points.cols() == centroids.cols(),
              "nearest_centroid: dim mismatch");
  SSLSV_CHECK(centroids.rows() > 0, "nearest_centroid: no centroids");
  assign->assign(points.rows(), 0);
  dist2->assign(points.rows(), 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(points.rows()); ++i)
    nearest_one(points, centroids, static_cast<std::size_t>(i),
                &(*assign)[i], &(*dist2)[i]);
  return blocked_sum_impl(*dist2);
}

namespace ref {

double blocked_sum(const std::vector<double>& v) { return blocked_sum_impl(v); }

void cosine_matrix(const Matrix& a, const Matrix& b, double eps_norm,
                   Matrix* out) {
  SSLSV_CHECK(a.cols() == b.cols(), "cosine_matrix: dim mismatch");
  *out = Matrix(a.rows(), b.rows());
  auto ia = inv_norms_serial(a, eps_norm);
  auto ib = inv_norms_serial(b, eps_norm);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j)
      (*out)(i, j) = row_dot(ar, b.row(j).data(), a.cols()) * ia[i] * ib[j];
  }
}

void cosine_pairs(const Matrix& a, const Matrix& b,
                  const std::vector<std::uint32_t>& ai,
                  const std::vector<std::uint32_t>& bi, double eps_norm,
                  std::vector<double>* out) {
  SSLSV_CHECK(a.cols() == b.cols(), "cosine_pairs: dim mismatch");
  SSLSV_CHECK(ai.size() == bi.size(), "cosine_pairs: index size mismatch");
  out->assign(ai.size(), 0.0);
  auto ia = inv_norms_serial(a, eps_norm);
  auto ib = inv_norms_serial(b, eps_norm);
  for (std::size_t k = 0; k < ai.size(); ++k)
    (*out)[k] = row_dot(a.row(ai[k]).data(), b.row(bi[k]).data(), a.cols()) *
                ia[ai[k]] * ib[bi[k]];
}

double nearest_centroid(const Matrix& points, const Matrix& centroids,
                        std::vector<std::uint32_t>* assign,
                        std::vector<double>* dist2) {
  SSLSV_CHECK(points.cols() == centroids.cols(),
              "nearest_centroid: dim mismatch");
  SSLSV_CHECK(centroids.rows() > 0, "nearest_centroid: no centroids");
  assign->assign(points.rows(), 0);
  dist2->assign(points.rows(), 0.0);
  for (std::size_t i = 0; i < points.rows(); ++i)
    nearest_one(points, centroids, i, &(*assign)[i], &(*dist2)[i]);
  return blocked_sum_impl(*dist2);
}

}  // namespace ref

}  // namespace sslsv::kernels

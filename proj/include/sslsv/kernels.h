// sslsv/kernels.h

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
#include <vector>

#include "sslsv/types.h"

// Data-parallel inner loops shared by scoring, clustering and training.
// Every kernel here is deterministic: outputs are written to disjoint
// locations, and reductions use a fixed block decomposition that does not
// depend on the thread count, so the OpenMP versions produce bit-identical
// results to the serial references in kernels::ref (which the tests and
// the kernel_bench tool compare).

namespace sslsv::kernels {

// Fixed block length for reductions.  Changing it changes rounding, so it
// is a constant, not a knob.
inline constexpr std::size_t kReduceBlock = 1024;

// Sum in fixed 1024-element blocks: block sums left to right, then the
// per-block partials left to right.
double blocked_sum(const std::vector<double>& v);

// out(i, j) = cos(a_i, b_j) with the stabilized cosine
// dot(a, b) / (sqrt(|a|^2 + eps) * sqrt(|b|^2 + eps)).
void cosine_matrix(const Matrix& a, const Matrix& b, double eps_norm,
                   Matrix* out);

// Scores an explicit list of row pairs: out[k] = cos(a_{pi[k]}, b_{qi[k]}).
void cosine_pairs(const Matrix& a, const Matrix& b,
                  const std::vector<std::uint32_t>& ai,
                  const std::vector<std::uint32_t>& bi, double eps_norm,
                  std::vector<double>* out);

// For each point row, the index of the nearest centroid by squared
// Euclidean distance (ties to the lowest index) and that distance.
// Returns the inertia (blocked sum of distances).
double nearest_centroid(const Matrix& points, const Matrix& centroids,
                        std::vector<std::uint32_t>* assign,
                        std::vector<double>* dist2);

namespace ref {
double blocked_sum(const std::vector<double>& v);
void cosine_matrix(const Matrix& a, const Matrix& b, double eps_norm,
                   Matrix* out);
void cosine_pairs(const Matrix& a, const Matrix& b,
                  const std::vector<std::uint32_t>& ai,
                  const std::vector<std::uint32_t>& bi, double eps_norm,
                  std::vector<double>* out);
double nearest_centroid(const Matrix& points, const Matrix& centroids,
                        std::vector<std::uint32_t>* assign,
                        std::vector<double>* dist2);
}  // namespace ref

}  // namespace sslsv::kernels

// sslsv/embedops.h

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

#include <span>
#include <vector>

#include "sslsv/types.h"

namespace sslsv::embedops {

// Stabilization constants: eps_norm goes under the square root of the
// vector norm, eps_pool is the variance clamp in statistics pooling.
struct StabilityConstants {
  double eps_norm = 1.0e-4;
  double eps_pool = 1.0e-3;
};

inline constexpr double kDefaultEpsNorm = 1.0e-4;
inline constexpr double kDefaultEpsPool = 1.0e-3;

// x / sqrt(sum x_k^2 + eps).  The output norm is strictly below 1.
std::vector<double> length_normalize(std::span<const double> x,
                                     double eps_norm = kDefaultEpsNorm);

// In-place row-wise length normalization of a whole set.
void length_normalize_rows(Matrix* m, double eps_norm = kDefaultEpsNorm);

// Dot product of the two length-normalized vectors.
double cosine_score(std::span<const double> a, std::span<const double> b,
                    double eps_norm = kDefaultEpsNorm);

enum class PoolVariant {
  kClamp,  // sigma = sqrt(max(E[x^2] - E[x]^2, eps))
  kAdd,    // sigma = sqrt(E[x^2] - E[x]^2 + eps)
};

// Mean and standard deviation over the T frames of a T x F matrix,
// concatenated into a vector of length 2F.
std::vector<double> stats_pool(const Matrix& frames,
                               double eps_pool = kDefaultEpsPool,
                               PoolVariant variant = PoolVariant::kClamp);

// Subtracts from each frame the mean over a window of `window` frames
// centered on it.  Near the edges the window is shifted inward so it
// keeps min(window, T) frames; for T <= window this reduces to global
// mean subtraction.
Matrix sliding_cmn(const Matrix& features, std::size_t window = 300);

struct MvnStats {
  std::vector<double> mean;
  std::vector<double> std;  // dims with raw std below 1e-8 are set to 1

  friend bool operator==(const MvnStats&, const MvnStats&) = default;
};

MvnStats compute_mvn_stats(const Matrix& dataset);
Matrix global_mvn(const Matrix& features, const MvnStats& stats);

}  // namespace sslsv::embedops

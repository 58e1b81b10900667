// sslsv/kernel_bench.cc

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

// Times the parallel kernels against their serial reference and checks
// that both produce bit-identical results on the same inputs.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <omp.h>

#include "sslsv/kernels.h"
#include "sslsv/rng.h"
#include "sslsv/types.h"

namespace {

using namespace sslsv;

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng* rng) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = rng->gaussian();
  return m;
}

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

void report(const std::string& name, double serial_s, double parallel_s,
            bool identical) {
  std::printf("%-24s %10.3f ms %10.3f ms %7.2fx   %s\n", name.c_str(),
              1e3 * serial_s, 1e3 * parallel_s, serial_s / parallel_s,
              identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  const int reps = 5;
  Rng rng(2024);

  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-24s %13s %13s %9s\n", "kernel", "serial", "parallel",
              "speedup");

  {
    const std::size_t n = 4'000'000;
    std::vector<double> x(n);
    for (auto& v : x) v = rng.uniform();
    double s_ser = 0.0, s_par = 0.0;
    double t_ser =
        time_best_of(reps, [&] { s_ser = kernels::ref::blocked_sum(x); });
    double t_par = time_best_of(reps, [&] { s_par = kernels::blocked_sum(x); });
    report("blocked_sum 4M", t_ser, t_par, s_ser == s_par);
  }

  {
    Matrix a = random_matrix(600, 192, &rng);
    Matrix b = random_matrix(800, 192, &rng);
    Matrix m_ser, m_par;
    double t_ser = time_best_of(
        reps, [&] { kernels::ref::cosine_matrix(a, b, 1.0e-4, &m_ser); });
    double t_par = time_best_of(
        reps, [&] { kernels::cosine_matrix(a, b, 1.0e-4, &m_par); });
    report("cosine_matrix 600x800", t_ser, t_par, m_ser == m_par);
  }

  {
    Matrix pts = random_matrix(20'000, 64, &rng);
    Matrix cent = random_matrix(256, 64, &rng);
    std::vector<std::uint32_t> a_ser, a_par;
    std::vector<double> d_ser, d_par;
    double i_ser = 0.0, i_par = 0.0;
    double t_ser = time_best_of(reps, [&] {
      i_ser = kernels::ref::nearest_centroid(pts, cent, &a_ser, &d_ser);
    });
    double t_par = time_best_of(reps, [&] {
      i_par = kernels::nearest_centroid(pts, cent, &a_par, &d_par);
    });
    report("nearest_centroid 20k", t_ser, t_par,
           i_ser == i_par && a_ser == a_par && d_ser == d_par);
  }

  return 0;
}

// sslsv/cluster.cc

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

#include "sslsv/cluster.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "sslsv/embedops.h"
#include "sslsv/kernels.h"
#include "sslsv/rng.h"

namespace sslsv::cluster {

namespace {

// Sample an index proportional to weights[i] by walking the cumulative
// sum.  All-zero weights fall back to a uniform draw.
std::size_t sample_by_weight(const std::vector<double>& weights, Rng* rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) return rng->uniform_int(weights.size());
  double u = rng->uniform() * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    cum += weights[i];
    if (u < cum) return i;
  }
  return weights.size() - 1;
}

Matrix kmeanspp_init(const Matrix& points, std::size_t k, Rng* rng) {
  const std::size_t n = points.rows(), d = points.cols();
  Matrix centroids(k, d);
  std::size_t first = rng->uniform_int(n);
  std::copy(points.row(first).begin(), points.row(first).end(),
            centroids.row(0).begin());

  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    auto prev = centroids.row(c - 1);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      auto pi = points.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        double diff = pi[j] - prev[j];
        s += diff * diff;
      }
      d2[i] = std::min(d2[i], s);
    }
    std::size_t pick = sample_by_weight(d2, rng);
    std::copy(points.row(pick).begin(), points.row(pick).end(),
              centroids.row(c).begin());
  }
  return centroids;
}

struct LloydOutcome {
  Matrix centroids;
  std::vector<std::uint32_t> assign;
  double inertia = 0.0;
  int iters = 0;
};

LloydOutcome lloyd(const Matrix& points, Matrix centroids, int max_iters) {
  const std::size_t n = points.rows(), d = points.cols();
  const std::size_t k = centroids.rows();

  LloydOutcome out;
  std::vector<std::uint32_t> assign;
  std::vector<double> dist2;
  double inertia = std::numeric_limits<double>::infinity();
  int it = 0;
  while (true) {
    std::vector<std::uint32_t> new_assign;
    double new_inertia =
        kernels::nearest_centroid(points, centroids, &new_assign, &dist2);
    SSLSV_CHECK(new_inertia <= inertia * (1.0 + 1e-9) + 1e-9,
                "k-means inertia increased");
    inertia = new_inertia;
    if (new_assign == assign) break;
    assign = std::move(new_assign);
    if (it >= max_iters) break;
    ++it;

    // Size-weighted means; accumulation follows point order.
    Matrix sums(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = sums.row(assign[i]);
      auto src = points.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      ++counts[assign[i]];
    }
    std::vector<double> far = dist2;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        auto dst = centroids.row(c);
        auto src = sums.row(c);
        for (std::size_t j = 0; j < d; ++j)
          dst[j] = src[j] / static_cast<double>(counts[c]);
      } else {
        // Reseed to the farthest point; each empty cluster this round
        // takes a distinct point.
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
          if (far[i] > far[best]) best = i;
        std::copy(points.row(best).begin(), points.row(best).end(),
                  centroids.row(c).begin());
        far[best] = -1.0;
      }
    }
  }
  out.centroids = std::move(centroids);
  out.assign = std::move(assign);
  out.inertia = inertia;
  out.iters = it;
  return out;
}

void check_same_ids(const LabelSet& a, const LabelSet& b,
                    std::vector<std::size_t>* b_row_of_a) {
  if (a.size() != b.size())
    throw_error(ErrorCode::kDimMismatch, "labelings cover different id sets");
  std::unordered_map<std::string, std::size_t> row;
  row.reserve(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) row[b.ids[i]] = i;
  b_row_of_a->resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto it = row.find(a.ids[i]);
    if (it == row.end())
      throw_error(ErrorCode::kMissingId, "id missing from second labeling: " +
                                             a.ids[i]);
    (*b_row_of_a)[i] = it->second;
  }
}

// Contingency counts, rows = labels of a, cols = labels of b.
Matrix contingency(const LabelSet& a, const LabelSet& b,
                   const std::vector<std::size_t>& b_row_of_a) {
  const std::size_t na = a.max_label() + 1, nb = b.max_label() + 1;
  Matrix c(na, nb);
  for (std::size_t i = 0; i < a.size(); ++i)
    c(a.labels[i], b.labels[b_row_of_a[i]]) += 1.0;
  return c;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, const KMeansConfig& cfg) {
  const std::size_t n = points.rows();
  if (n == 0 || points.cols() == 0)
    throw_error(ErrorCode::kInvalidArgument, "kmeans: empty input");
  if (cfg.k < 1 || cfg.k > n)
    throw_error(ErrorCode::kInvalidArgument,
                "kmeans: k must be in [1, n_points]");
  SSLSV_CHECK(cfg.max_iters >= 1 && cfg.n_restarts >= 1, "kmeans config");

  Rng master(cfg.seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < cfg.n_restarts; ++r) {
    Rng rng = master.fork(static_cast<std::uint64_t>(r));
    LloydOutcome o =
        lloyd(points, kmeanspp_init(points, cfg.k, &rng), cfg.max_iters);
    if (o.inertia < best.inertia) {
      best.centroids = std::move(o.centroids);
      best.assign = std::move(o.assign);
      best.inertia = o.inertia;
      best.iters = o.iters;
    }
  }
  return best;
}

std::vector<std::uint32_t> ahc_merge(const Matrix& centroids,
                                     std::vector<std::size_t> sizes,
                                     std::size_t n_target, double eps_norm) {
  const std::size_t k = centroids.rows();
  if (k == 0 || n_target < 1)
    throw_error(ErrorCode::kInvalidArgument, "ahc_merge: empty input");
  if (sizes.size() != k)
    throw_error(ErrorCode::kDimMismatch, "ahc_merge: sizes length");

  Matrix c = centroids;
  std::vector<bool> alive(k, true);
  std::vector<std::uint32_t> owner(k);
  for (std::size_t i = 0; i < k; ++i) owner[i] = static_cast<std::uint32_t>(i);

  std::size_t n_alive = k;
  while (n_alive > n_target) {
    double best_sim = -std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < k; ++j) {
        if (!alive[j]) continue;
        double sim = embedops::cosine_score(c.row(i), c.row(j), eps_norm);
        if (sim > best_sim) {
          best_sim = sim;
          bi = i;
          bj = j;
        }
      }
    }
    const double total = static_cast<double>(sizes[bi] + sizes[bj]);
    auto di = c.row(bi);
    auto dj = c.row(bj);
    if (total > 0.0) {
      const double wi = static_cast<double>(sizes[bi]) / total;
      const double wj = static_cast<double>(sizes[bj]) / total;
      for (std::size_t t = 0; t < c.cols(); ++t)
        di[t] = wi * di[t] + wj * dj[t];
    } else {
      for (std::size_t t = 0; t < c.cols(); ++t)
        di[t] = 0.5 * (di[t] + dj[t]);
    }
    sizes[bi] += sizes[bj];
    alive[bj] = false;
    for (auto& o : owner)
      if (o == bj) o = static_cast<std::uint32_t>(bi);
    --n_alive;
  }

  // Dense labels in ascending order of the surviving centroid index.
  std::vector<std::uint32_t> dense(k, 0);
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < k; ++i)
    if (alive[i]) dense[i] = next++;
  std::vector<std::uint32_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = dense[owner[i]];
  return out;
}

LabelSet generate_pseudo_labels(const EmbeddingSet& embeddings,
                                const PseudoLabelConfig& cfg) {
  validate_embedding_set(embeddings);
  const std::size_t n = embeddings.size();
  if (cfg.n_clusters < 1 || cfg.kmeans_k < cfg.n_clusters)
    throw_error(ErrorCode::kInvalidArgument,
                "generate_pseudo_labels: need kmeans_k >= n_clusters >= 1");
  if (n < cfg.n_clusters)
    throw_error(ErrorCode::kInvalidArgument,
                "generate_pseudo_labels: fewer points than clusters");

  Matrix pts = embeddings.mat;
  embedops::length_normalize_rows(&pts, cfg.eps_norm);

  KMeansConfig kcfg;
  kcfg.k = std::min(cfg.kmeans_k, n);
  kcfg.max_iters = cfg.kmeans_iters;
  kcfg.n_restarts = cfg.kmeans_restarts;
  kcfg.seed = cfg.seed;
  KMeansResult km = kmeans(pts, kcfg);

  std::vector<std::size_t> sizes(kcfg.k, 0);
  for (auto a : km.assign) ++sizes[a];
  std::vector<std::uint32_t> merged =
      ahc_merge(km.centroids, sizes, cfg.n_clusters, cfg.eps_norm);

  // Relabel in order of first appearance over the utterances.
  LabelSet out;
  out.ids = embeddings.ids;
  out.labels.resize(n);
  std::unordered_map<std::uint32_t, std::uint32_t> remap;
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t lab = merged[km.assign[i]];
    auto [it, inserted] = remap.emplace(lab, next);
    if (inserted) ++next;
    out.labels[i] = it->second;
  }
  return out;
}

EmbeddingSet concat_embeddings(const EmbeddingSet& a, const EmbeddingSet& b,
                               double eps_norm) {
  validate_embedding_set(a);
  validate_embedding_set(b);
  if (a.size() != b.size())
    throw_error(ErrorCode::kDimMismatch,
                "concat_embeddings: id sets differ in size");
  std::unordered_map<std::string, std::size_t> row;
  row.reserve(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) row[b.ids[i]] = i;

  EmbeddingSet out;
  out.ids = a.ids;
  out.mat = Matrix(a.size(), a.dim() + b.dim());
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto it = row.find(a.ids[i]);
    if (it == row.end())
      throw_error(ErrorCode::kMissingId,
                  "concat_embeddings: id missing: " + a.ids[i]);
    auto na = embedops::length_normalize(a.mat.row(i), eps_norm);
    auto nb = embedops::length_normalize(b.mat.row(it->second), eps_norm);
    auto dst = out.mat.row(i);
    std::copy(na.begin(), na.end(), dst.begin());
    std::copy(nb.begin(), nb.end(), dst.begin() + a.dim());
  }
  return out;
}

std::vector<double> cluster_agreement_weights(const LabelSet& labels_a,
                                              const LabelSet& labels_b,
                                              const AgreementConfig& cfg) {
  validate_label_set(labels_a);
  validate_label_set(labels_b);
  SSLSV_CHECK(cfg.downweight >= 0.0 && cfg.downweight <= 1.0,
              "agreement downweight");
  std::vector<std::size_t> b_row;
  check_same_ids(labels_a, labels_b, &b_row);
  Matrix c = contingency(labels_a, labels_b, b_row);
  const std::size_t na = c.rows(), nb = c.cols();

  // Greedy one-to-one matching by descending overlap, smallest index
  // pair on ties.
  std::vector<std::int64_t> match_of_a(na, -1);
  std::vector<bool> b_used(nb, false);
  while (true) {
    double best = 0.0;
    std::size_t bi = 0, bj = 0;
    bool found = false;
    for (std::size_t i = 0; i < na; ++i) {
      if (match_of_a[i] >= 0) continue;
      for (std::size_t j = 0; j < nb; ++j) {
        if (b_used[j]) continue;
        if (c(i, j) > best) {
          best = c(i, j);
          bi = i;
          bj = j;
          found = true;
        }
      }
    }
    if (!found) break;
    match_of_a[bi] = static_cast<std::int64_t>(bj);
    b_used[bj] = true;
  }

  std::vector<double> weights(labels_a.size());
  for (std::size_t i = 0; i < labels_a.size(); ++i) {
    const std::uint32_t ca = labels_a.labels[i];
    const std::uint32_t cb = labels_b.labels[b_row[i]];
    weights[i] = (match_of_a[ca] == static_cast<std::int64_t>(cb))
                     ? 1.0
                     : cfg.downweight;
  }
  return weights;
}

ExchangeResult cross_label_exchange(const EmbeddingSet& emb_a,
                                    const EmbeddingSet& emb_b,
                                    const PseudoLabelConfig& cfg,
                                    const AgreementConfig& agreement,
                                    bool concat) {
  PseudoLabelConfig cfg_a = cfg;  // labels produced from a's embeddings
  PseudoLabelConfig cfg_b = cfg;  // labels produced from b's embeddings
  cfg_a.seed = mix_seed(cfg.seed, 0xA);
  cfg_b.seed = mix_seed(cfg.seed, 0xB);
  LabelSet from_a, from_b;
  if (concat) {
    // Both labelings come from the concatenated space; only the k-means
    // seeds differ.
    EmbeddingSet joint = concat_embeddings(emb_a, emb_b, cfg.eps_norm);
    from_a = generate_pseudo_labels(joint, cfg_a);
    from_b = generate_pseudo_labels(joint, cfg_b);
  } else {
    from_a = generate_pseudo_labels(emb_a, cfg_a);
    from_b = generate_pseudo_labels(emb_b, cfg_b);
  }

  ExchangeResult out;
  out.agreement_ari = adjusted_rand_index(from_a, from_b);
  out.labels_for_a = from_b;
  out.labels_for_a.weights =
      cluster_agreement_weights(from_b, from_a, agreement);
  out.labels_for_b = from_a;
  out.labels_for_b.weights =
      cluster_agreement_weights(from_a, from_b, agreement);
  return out;
}

double adjusted_rand_index(const LabelSet& a, const LabelSet& b) {
  validate_label_set(a);
  validate_label_set(b);
  std::vector<std::size_t> b_row;
  check_same_ids(a, b, &b_row);
  Matrix c = contingency(a, b, b_row);

  auto choose2 = [](double m) { return 0.5 * m * (m - 1.0); };
  double sum_ij = 0.0;
  for (double v : c.data()) sum_ij += choose2(v);
  double sum_a = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    double row_total = 0.0;
    for (std::size_t j = 0; j < c.cols(); ++j) row_total += c(i, j);
    sum_a += choose2(row_total);
  }
  double sum_b = 0.0;
  for (std::size_t j = 0; j < c.cols(); ++j) {
    double col_total = 0.0;
    for (std::size_t i = 0; i < c.rows(); ++i) col_total += c(i, j);
    sum_b += choose2(col_total);
  }
  const double n = static_cast<double>(a.size());
  if (n < 2.0) return 1.0;
  const double expected = sum_a * sum_b / choose2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  const double denom = max_index - expected;
  if (denom == 0.0) return 1.0;  // both partitions degenerate
  return (sum_ij - expected) / denom;
}

}  // namespace sslsv::cluster

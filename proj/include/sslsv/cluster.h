// sslsv/cluster.h

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

namespace sslsv::cluster {

struct KMeansConfig {
  std::size_t k = 225;
  int max_iters = 100;
  int n_restarts = 3;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  Matrix centroids;  // k x d
  std::vector<std::uint32_t> assign;
  double inertia = 0.0;
  int iters = 0;  // Lloyd iterations of the winning restart
};

// Lloyd's algorithm with k-means++ seeding (inverse-CDF sampling over the
// cumulative squared distances).  Empty clusters are reseeded to the
// farthest point.  Across restarts the lowest inertia wins, earliest
// restart on ties.  The within-run inertia sequence is checked to be
// non-increasing.
KMeansResult kmeans(const Matrix& points, const KMeansConfig& cfg);

// Agglomerative merge of cluster centroids down to n_target clusters.
// Each step merges the pair with the highest stabilized cosine similarity
// (ties to the lexicographically smallest index pair); the merged
// centroid is the size-weighted mean.  Returns, per input centroid, its
// final cluster label in [0, n_target), dense in ascending order of the
// surviving centroid indices.
std::vector<std::uint32_t> ahc_merge(const Matrix& centroids,
                                     std::vector<std::size_t> sizes,
                                     std::size_t n_target,
                                     double eps_norm = 1.0e-4);

struct PseudoLabelConfig {
  std::size_t kmeans_k = 225;   // clamped to the number of points
  std::size_t n_clusters = 75;  // pseudo-speaker count after the merge
  int kmeans_iters = 100;
  int kmeans_restarts = 3;
  double eps_norm = 1.0e-4;
  std::uint64_t seed = 0;
};

// Length-normalizes the embeddings, over-clusters with k-means, merges
// the centroids down to n_clusters, then relabels densely in order of
// first appearance over the utterance list.
LabelSet generate_pseudo_labels(const EmbeddingSet& embeddings,
                                const PseudoLabelConfig& cfg);

// Row-wise concatenation over a shared id set; each part is length
// normalized first.  The order is taken from `a` and both sets must
// cover exactly the same ids.
EmbeddingSet concat_embeddings(const EmbeddingSet& a, const EmbeddingSet& b,
                               double eps_norm = 1.0e-4);

struct AgreementConfig {
  double downweight = 0.5;  // weight of utterances the labelings disagree on
};

// Per-utterance training weights from two labelings of the same ids
// (aligned to the id order of labels_a).  Clusters are matched one-to-one
// greedily by descending overlap; an utterance whose two cluster
// assignments are matched with each other keeps weight 1, any other
// utterance gets cfg.downweight.
std::vector<double> cluster_agreement_weights(const LabelSet& labels_a,
                                              const LabelSet& labels_b,
                                              const AgreementConfig& cfg);

struct ExchangeResult {
  // Labels each network trains on next: clustered from the *other*
  // network's embeddings, with agreement weights attached.
  LabelSet labels_for_a;
  LabelSet labels_for_b;
  double agreement_ari = 0.0;
};

// Cross-network label exchange: cluster the embeddings of each network,
// hand each network the labels derived from the other one, and attach
// agreement weights computed between the two labelings.  With concat set
// both labelings are clustered from the concatenated embedding space and
// differ only through their k-means seeds.
ExchangeResult cross_label_exchange(const EmbeddingSet& emb_a,
                                    const EmbeddingSet& emb_b,
                                    const PseudoLabelConfig& cfg,
                                    const AgreementConfig& agreement,
                                    bool concat = false);

// Adjusted Rand index between two labelings of the same ids; 1 for
// identical partitions, near 0 for independent ones.
double adjusted_rand_index(const LabelSet& a, const LabelSet& b);

}  // namespace sslsv::cluster

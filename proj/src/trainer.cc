// sslsv/trainer.cc

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

#include "sslsv/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "sslsv/io.h"

namespace sslsv::trainer {

namespace {

// Examples inside a batch are processed in fixed chunks; chunk partials
// are merged in index order, so results do not depend on thread count.
constexpr std::size_t kGradChunk = 8;

void check_finite_block(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x))
      throw_error(ErrorCode::kNonFinite,
                  std::string(what) + ": non-finite value");
}

// Per-example seed derivation (splitmix64 over mixed-in indices) so
// augmentation draws depend only on (seed, epoch, row), not on batch
// composition or thread scheduling.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = seed;
  for (std::uint64_t add : {a + 1, b + 1}) {
    x += 0x9e3779b97f4a7c15ULL * add;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
  }
  return x;
}

double stabilized_norm(std::span<const double> v, double eps) {
  double s = eps;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

ExtractorParams ExtractorParams::linear(std::size_t input_dim,
                                        std::size_t embedding_dim) {
  SSLSV_CHECK(input_dim > 0 && embedding_dim > 0, "extractor dims");
  ExtractorParams p;
  p.input_dim = input_dim;
  p.embedding_dim = embedding_dim;
  p.w1 = Matrix(embedding_dim, input_dim);
  p.b1.assign(embedding_dim, 0.0);
  return p;
}

ExtractorParams ExtractorParams::with_hidden(std::size_t input_dim,
                                             std::size_t hidden_dim,
                                             std::size_t embedding_dim) {
  SSLSV_CHECK(input_dim > 0 && hidden_dim > 0 && embedding_dim > 0,
              "extractor dims");
  ExtractorParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.embedding_dim = embedding_dim;
  p.w1 = Matrix(hidden_dim, input_dim);
  p.b1.assign(hidden_dim, 0.0);
  p.w2 = Matrix(embedding_dim, hidden_dim);
  p.b2.assign(embedding_dim, 0.0);
  return p;
}

std::size_t ExtractorParams::n_params() const {
  return w1.data().size() + b1.size() + w2.data().size() + b2.size();
}

std::vector<std::span<double>> ExtractorParams::blocks() {
  std::vector<std::span<double>> out;
  out.emplace_back(w1.data());
  out.emplace_back(b1);
  if (!is_linear()) {
    out.emplace_back(w2.data());
    out.emplace_back(b2);
  }
  return out;
}

std::vector<std::span<const double>> ExtractorParams::blocks() const {
  std::vector<std::span<const double>> out;
  out.emplace_back(w1.data());
  out.emplace_back(b1);
  if (!is_linear()) {
    out.emplace_back(w2.data());
    out.emplace_back(b2);
  }
  return out;
}

std::vector<bool> ExtractorParams::bias_blocks() const {
  if (is_linear()) return {false, true};
  return {false, true, false, true};
}

void init_identity(ExtractorParams* p) {
  SSLSV_CHECK(p->is_linear() && p->input_dim == p->embedding_dim,
              "identity init needs a square linear map");
  for (std::size_t i = 0; i < p->embedding_dim; ++i)
    for (std::size_t j = 0; j < p->input_dim; ++j)
      p->w1(i, j) = (i == j) ? 1.0 : 0.0;
  std::fill(p->b1.begin(), p->b1.end(), 0.0);
}

void init_gaussian(ExtractorParams* p, Rng* rng) {
  double s1 = 1.0 / std::sqrt(static_cast<double>(p->input_dim));
  for (double& w : p->w1.data()) w = s1 * rng->gaussian();
  std::fill(p->b1.begin(), p->b1.end(), 0.0);
  if (!p->is_linear()) {
    double s2 = 1.0 / std::sqrt(static_cast<double>(p->hidden_dim));
    for (double& w : p->w2.data()) w = s2 * rng->gaussian();
    std::fill(p->b2.begin(), p->b2.end(), 0.0);
  }
}

ExtractorGrads ExtractorGrads::zeros_like(const ExtractorParams& p) {
  ExtractorGrads g;
  g.w1 = Matrix(p.w1.rows(), p.w1.cols());
  g.b1.assign(p.b1.size(), 0.0);
  g.w2 = Matrix(p.w2.rows(), p.w2.cols());
  g.b2.assign(p.b2.size(), 0.0);
  return g;
}

std::vector<std::span<double>> ExtractorGrads::blocks() {
  std::vector<std::span<double>> out;
  out.emplace_back(w1.data());
  out.emplace_back(b1);
  if (!w2.empty() || !b2.empty()) {
    out.emplace_back(w2.data());
    out.emplace_back(b2);
  }
  return out;
}

std::vector<std::span<const double>> ExtractorGrads::blocks() const {
  std::vector<std::span<const double>> out;
  out.emplace_back(w1.data());
  out.emplace_back(b1);
  if (!w2.empty() || !b2.empty()) {
    out.emplace_back(w2.data());
    out.emplace_back(b2);
  }
  return out;
}

void ExtractorGrads::add(const ExtractorGrads& other) {
  auto dst = blocks();
  auto src = other.blocks();
  SSLSV_CHECK(dst.size() == src.size(), "grad block count");
  for (std::size_t b = 0; b < dst.size(); ++b) {
    SSLSV_CHECK(dst[b].size() == src[b].size(), "grad block size");
    for (std::size_t k = 0; k < dst[b].size(); ++k) dst[b][k] += src[b][k];
  }
}

void ExtractorGrads::scale(double a) {
  for (auto blk : blocks())
    for (double& x : blk) x *= a;
}

std::vector<double> forward(const ExtractorParams& p,
                            std::span<const double> x) {
  if (x.size() != p.input_dim)
    throw_error(ErrorCode::kDimMismatch, "forward: input dim mismatch");
  auto affine = [](const Matrix& w, const std::vector<double>& b,
                   std::span<const double> in) {
    std::vector<double> out(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double s = b[i];
      auto wi = w.row(i);
      for (std::size_t j = 0; j < in.size(); ++j) s += wi[j] * in[j];
      out[i] = s;
    }
    return out;
  };
  std::vector<double> h = affine(p.w1, p.b1, x);
  if (p.is_linear()) return h;
  for (double& v : h) v = std::tanh(v);
  return affine(p.w2, p.b2, h);
}

void backward_accumulate(const ExtractorParams& p, std::span<const double> x,
                         std::span<const double> upstream_grad, double weight,
                         ExtractorGrads* acc) {
  if (x.size() != p.input_dim || upstream_grad.size() != p.embedding_dim)
    throw_error(ErrorCode::kDimMismatch, "backward: dim mismatch");

  if (p.is_linear()) {
    for (std::size_t i = 0; i < p.embedding_dim; ++i) {
      double u = weight * upstream_grad[i];
      auto gw = acc->w1.row(i);
      for (std::size_t j = 0; j < x.size(); ++j) gw[j] += u * x[j];
      acc->b1[i] += u;
    }
    return;
  }

  // Recompute the forward pass for the intermediates.
  std::vector<double> pre(p.hidden_dim), h(p.hidden_dim);
  for (std::size_t i = 0; i < p.hidden_dim; ++i) {
    double s = p.b1[i];
    auto wi = p.w1.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) s += wi[j] * x[j];
    pre[i] = s;
    h[i] = std::tanh(s);
  }

  std::vector<double> dh(p.hidden_dim, 0.0);
  for (std::size_t i = 0; i < p.embedding_dim; ++i) {
    double u = weight * upstream_grad[i];
    auto gw = acc->w2.row(i);
    auto wi = p.w2.row(i);
    for (std::size_t j = 0; j < p.hidden_dim; ++j) {
      gw[j] += u * h[j];
      dh[j] += u * wi[j];
    }
    acc->b2[i] += u;
  }
  for (std::size_t i = 0; i < p.hidden_dim; ++i) {
    double dpre = dh[i] * (1.0 - h[i] * h[i]);
    auto gw = acc->w1.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) gw[j] += dpre * x[j];
    acc->b1[i] += dpre;
  }
}

BackwardResult backward(const ExtractorParams& p, std::span<const double> x,
                        std::span<const double> upstream_grad) {
  BackwardResult res;
  res.grads = ExtractorGrads::zeros_like(p);
  backward_accumulate(p, x, upstream_grad, 1.0, &res.grads);

  // Input gradient via the transposed maps.
  res.input_grad.assign(p.input_dim, 0.0);
  if (p.is_linear()) {
    for (std::size_t i = 0; i < p.embedding_dim; ++i)
      for (std::size_t j = 0; j < p.input_dim; ++j)
        res.input_grad[j] += upstream_grad[i] * p.w1(i, j);
    return res;
  }
  std::vector<double> h(p.hidden_dim);
  for (std::size_t i = 0; i < p.hidden_dim; ++i) {
    double s = p.b1[i];
    auto wi = p.w1.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) s += wi[j] * x[j];
    h[i] = std::tanh(s);
  }
  std::vector<double> dh(p.hidden_dim, 0.0);
  for (std::size_t i = 0; i < p.embedding_dim; ++i)
    for (std::size_t j = 0; j < p.hidden_dim; ++j)
      dh[j] += upstream_grad[i] * p.w2(i, j);
  for (std::size_t i = 0; i < p.hidden_dim; ++i) {
    double dpre = dh[i] * (1.0 - h[i] * h[i]);
    for (std::size_t j = 0; j < p.input_dim; ++j)
      res.input_grad[j] += dpre * p.w1(i, j);
  }
  return res;
}

void sgd_step(std::span<double> params, std::span<const double> grad,
              std::span<double> velocity, double lr, const SgdConfig& cfg,
              bool is_bias) {
  SSLSV_CHECK(params.size() == grad.size() && params.size() == velocity.size(),
              "sgd_step: size mismatch");
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw_error(ErrorCode::kInvalidArgument, "sgd_step: bad learning rate");
  check_finite_block(grad, "sgd_step");
  const double wd = (is_bias && !cfg.decay_biases) ? 0.0 : cfg.weight_decay;
  const double mu = cfg.momentum;
  for (std::size_t k = 0; k < params.size(); ++k) {
    double g = grad[k] + wd * params[k];
    velocity[k] = mu * velocity[k] + g;
    if (cfg.nesterov)
      params[k] -= lr * (g + mu * velocity[k]);
    else
      params[k] -= lr * velocity[k];
  }
}

void sgd_step_all(ExtractorParams* params, const ExtractorGrads& grads,
                  ExtractorGrads* velocity, double lr, const SgdConfig& cfg) {
  auto pb = params->blocks();
  auto gb = grads.blocks();
  auto vb = velocity->blocks();
  auto bias = params->bias_blocks();
  SSLSV_CHECK(pb.size() == gb.size() && pb.size() == vb.size(),
              "sgd_step_all: block mismatch");
  for (std::size_t b = 0; b < pb.size(); ++b)
    sgd_step(pb[b], gb[b], vb[b], lr, cfg, bias[b]);
}

double lr_at(double progress, double nominal, const LrSchedule& sched) {
  if (!(progress >= 0.0 && progress <= 1.0))
    throw_error(ErrorCode::kInvalidArgument, "lr_at: progress outside [0,1]");
  if (!(nominal > 0.0))
    throw_error(ErrorCode::kInvalidArgument, "lr_at: nominal must be positive");
  SSLSV_CHECK(sched.warmup_frac >= 0.0 && sched.constant_frac >= 0.0 &&
                  sched.warmup_frac + sched.constant_frac < 1.0,
              "lr schedule fractions");
  SSLSV_CHECK(sched.n_decay_steps >= 1, "lr schedule decay steps");

  if (progress < sched.warmup_frac)
    return nominal * (progress / sched.warmup_frac);
  const double decay_begin = sched.warmup_frac + sched.constant_frac;
  if (progress < decay_begin) return nominal;

  const double seg_len =
      (1.0 - decay_begin) / static_cast<double>(sched.n_decay_steps);
  int idx = static_cast<int>((progress - decay_begin) / seg_len);
  idx = std::min(idx, sched.n_decay_steps - 1);  // progress == 1 lands here
  const int expo = sched.decay_at_segment_start ? idx + 1 : idx;
  return nominal * std::pow(sched.decay_factor, expo);
}

void MoCoQueue::push_row(std::span<const double> key) {
  SSLSV_CHECK(key.size() == dim_, "queue key dim");
  rows_.emplace_back(key.begin(), key.end());
  while (rows_.size() > capacity_) rows_.pop_front();
  SSLSV_CHECK(rows_.size() <= capacity_, "queue overflow");
}

void MoCoQueue::push(const Matrix& keys) {
  for (std::size_t i = 0; i < keys.rows(); ++i) push_row(keys.row(i));
}

Matrix MoCoQueue::snapshot() const {
  Matrix out(rows_.size(), dim_);
  for (std::size_t i = 0; i < rows_.size(); ++i)
    std::copy(rows_[i].begin(), rows_[i].end(), out.row(i).begin());
  return out;
}

void momentum_update(MoCoState* state, const ExtractorParams& query_params) {
  auto kb = state->key_params.blocks();
  auto qb = query_params.blocks();
  SSLSV_CHECK(kb.size() == qb.size(), "momentum_update: block mismatch");
  const double m = state->momentum;
  for (std::size_t b = 0; b < kb.size(); ++b) {
    SSLSV_CHECK(kb[b].size() == qb[b].size(), "momentum_update: size mismatch");
    for (std::size_t k = 0; k < kb[b].size(); ++k)
      kb[b][k] = m * kb[b][k] + (1.0 - m) * qb[b][k];
  }
}

void queue_push(MoCoState* state, const Matrix& keys) {
  state->queue.push(keys);
}

namespace {

// Chunk-local accumulator for classifier batches.
struct ClassifierAccum {
  ExtractorGrads ext;
  Matrix reps;
  double loss_sum = 0.0;
  double weight_sum = 0.0;
};

ExtractorParams make_initial(const EmbeddingSet& features,
                             const ExtractorShape& shape,
                             const ExtractorParams* init, Rng* rng) {
  if (init != nullptr) {
    if (init->input_dim != features.dim())
      throw_error(ErrorCode::kDimMismatch,
                  "initial extractor does not match feature dim");
    return *init;
  }
  SSLSV_CHECK(shape.embedding_dim > 0, "embedding dim");
  ExtractorParams p =
      shape.hidden_dim == 0
          ? ExtractorParams::linear(features.dim(), shape.embedding_dim)
          : ExtractorParams::with_hidden(features.dim(), shape.hidden_dim,
                                         shape.embedding_dim);
  init_gaussian(&p, rng);
  return p;
}

}  // namespace

ClassifierTrainResult train_classifier(const EmbeddingSet& features,
                                       const LabelSet& labels,
                                       const ClassifierTrainConfig& cfg,
                                       const ExtractorParams* init,
                                       const ExampleTransform& transform) {
  validate_embedding_set(features);
  validate_label_set(labels);
  SSLSV_CHECK(cfg.batch_size >= 1 && cfg.epochs >= 0, "train config");
  if (features.size() == 0)
    throw_error(ErrorCode::kInvalidArgument, "train_classifier: no examples");

  // Align labels (and weights) to feature row order.
  std::unordered_map<std::string, std::size_t> label_row;
  label_row.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) label_row[labels.ids[i]] = i;
  const std::size_t n = features.size();
  std::vector<std::uint32_t> y(n);
  std::vector<double> w(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = label_row.find(features.ids[i]);
    if (it == label_row.end())
      throw_error(ErrorCode::kMissingId,
                  "train_classifier: no label for " + features.ids[i]);
    y[i] = labels.labels[it->second];
    if (labels.weights) w[i] = (*labels.weights)[it->second];
  }
  std::size_t n_classes = 0;
  for (auto c : y) n_classes = std::max<std::size_t>(n_classes, c + 1);
  {
    std::vector<bool> seen(n_classes, false);
    std::size_t distinct = 0;
    for (auto c : y)
      if (!seen[c]) {
        seen[c] = true;
        ++distinct;
      }
    if (distinct < 2)
      throw_error(ErrorCode::kSingleClass,
                  "train_classifier: need at least two classes");
  }

  Rng rng(cfg.seed);
  ClassifierTrainResult res;
  res.params = make_initial(features, cfg.shape, init, &rng);
  const std::size_t emb_dim = res.params.embedding_dim;

  res.representatives = Matrix(n_classes, emb_dim);
  {
    double s = 1.0 / std::sqrt(static_cast<double>(emb_dim));
    for (double& v : res.representatives.data()) v = s * rng.gaussian();
  }

  ExtractorGrads vel = ExtractorGrads::zeros_like(res.params);
  Matrix rep_vel(n_classes, emb_dim);

  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps =
      std::max<std::size_t>(1, steps_per_epoch * cfg.epochs);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double ep_loss = 0.0, ep_weight = 0.0;

    for (std::size_t b0 = 0; b0 < n; b0 += batch, ++step) {
      const std::size_t bn = std::min(batch, n - b0);
      const std::size_t n_chunks = (bn + kGradChunk - 1) / kGradChunk;

      // Representative norms are fixed within the batch.
      std::vector<double> rep_norm(n_classes);
      for (std::size_t c = 0; c < n_classes; ++c)
        rep_norm[c] = stabilized_norm(res.representatives.row(c), cfg.eps_norm);

      std::vector<ClassifierAccum> chunks(n_chunks);
      std::exception_ptr eptr = nullptr;
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(n_chunks);
           ++ci) {
       try {
        auto& acc = chunks[ci];
        acc.ext = ExtractorGrads::zeros_like(res.params);
        acc.reps = Matrix(n_classes, emb_dim);
        const std::size_t lo = b0 + static_cast<std::size_t>(ci) * kGradChunk;
        const std::size_t hi = std::min(lo + kGradChunk, b0 + bn);
        std::vector<double> logits(n_classes), cosines(n_classes);
        std::vector<double> de(emb_dim);
        for (std::size_t e = lo; e < hi; ++e) {
          const std::size_t row = order[e];
          const double weight = w[row];
          if (weight == 0.0) continue;
          std::vector<double> x =
              transform ? transform(row, epoch, features.mat.row(row))
                        : std::vector<double>(features.mat.row(row).begin(),
                                              features.mat.row(row).end());
          std::vector<double> emb = forward(res.params, x);
          const double ne = stabilized_norm(emb, cfg.eps_norm);
          const std::uint32_t target = y[row];
          for (std::size_t c = 0; c < n_classes; ++c) {
            double dot = 0.0;
            auto rc = res.representatives.row(c);
            for (std::size_t k = 0; k < emb_dim; ++k) dot += emb[k] * rc[k];
            cosines[c] = dot / (ne * rep_norm[c]);
            logits[c] = margin_logit(cosines[c], c == target, cfg.margin);
          }
          losses::LossResult lr =
              cfg.loss == LossKind::kSoftmaxCe
                  ? losses::softmax_ce(logits, target)
                  : losses::bitempered_loss(logits, target, cfg.bitempered);
          std::fill(de.begin(), de.end(), 0.0);
          for (std::size_t c = 0; c < n_classes; ++c) {
            const double dcos =
                lr.grad[c] *
                losses::margin_logit_grad(cosines[c], c == target, cfg.margin);
            auto rc = res.representatives.row(c);
            auto gr = acc.reps.row(c);
            const double inv = 1.0 / (ne * rep_norm[c]);
            for (std::size_t k = 0; k < emb_dim; ++k) {
              de[k] += dcos * (rc[k] * inv - cosines[c] * emb[k] / (ne * ne));
              gr[k] += weight * dcos *
                       (emb[k] * inv -
                        cosines[c] * rc[k] / (rep_norm[c] * rep_norm[c]));
            }
          }
          backward_accumulate(res.params, x, de, weight, &acc.ext);
          acc.loss_sum += weight * lr.loss;
          acc.weight_sum += weight;
        }
       } catch (...) {
#pragma omp critical
        if (!eptr) eptr = std::current_exception();
       }
      }
      if (eptr) std::rethrow_exception(eptr);

      ExtractorGrads gsum = ExtractorGrads::zeros_like(res.params);
      Matrix rsum(n_classes, emb_dim);
      double loss_sum = 0.0, weight_sum = 0.0;
      for (const auto& acc : chunks) {
        gsum.add(acc.ext);
        for (std::size_t k = 0; k < rsum.data().size(); ++k)
          rsum.data()[k] += acc.reps.data()[k];
        loss_sum += acc.loss_sum;
        weight_sum += acc.weight_sum;
      }
      ep_loss += loss_sum;
      ep_weight += weight_sum;
      // A batch with zero total weight contributes nothing and performs
      // no update at all.
      if (weight_sum == 0.0) continue;
      if (!std::isfinite(loss_sum))
        throw_error(ErrorCode::kNonFinite, "train_classifier: loss diverged");

      const double inv_w = 1.0 / weight_sum;
      gsum.scale(inv_w);
      for (double& v : rsum.data()) v *= inv_w;
      const double lr_now =
          lr_at(static_cast<double>(step) / static_cast<double>(total_steps),
                cfg.nominal_lr, cfg.schedule);
      sgd_step_all(&res.params, gsum, &vel, lr_now, cfg.sgd);
      sgd_step(res.representatives.data(), rsum.data(), rep_vel.data(), lr_now,
               cfg.sgd, false);
    }
    res.epoch_losses.push_back(ep_weight > 0.0 ? ep_loss / ep_weight : 0.0);
  }
  return res;
}

ContrastiveTrainResult train_contrastive(const EmbeddingSet& features,
                                         const AugmentSampler& augment,
                                         const ContrastiveTrainConfig& cfg,
                                         const ExtractorParams* init) {
  validate_embedding_set(features);
  SSLSV_CHECK(cfg.batch_size >= 1 && cfg.epochs >= 0, "train config");
  SSLSV_CHECK(static_cast<bool>(augment), "augment sampler required");
  if (features.size() < 2)
    throw_error(ErrorCode::kInvalidArgument,
                "train_contrastive: need at least two utterances");

  Rng rng(cfg.seed);
  ContrastiveTrainResult res;
  res.params = make_initial(features, cfg.shape, init, &rng);
  const std::size_t emb_dim = res.params.embedding_dim;

  MoCoState state(res.params, cfg.loss.queue_capacity, cfg.moco_momentum);
  ExtractorGrads vel = ExtractorGrads::zeros_like(res.params);

  const std::size_t n = features.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps =
      std::max<std::size_t>(1, steps_per_epoch * cfg.epochs);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double ep_loss = 0.0;
    std::size_t ep_count = 0;

    for (std::size_t b0 = 0; b0 < n; b0 += batch, ++step) {
      const std::size_t bn = std::min(batch, n - b0);

      // Views are drawn serially from per-example streams keyed by
      // (seed, epoch, row); the gradient pass below may run in parallel.
      std::vector<std::vector<double>> q_in(bn), k_in(bn);
      for (std::size_t e = 0; e < bn; ++e) {
        const std::size_t row = order[b0 + e];
        Rng ex_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1,
                            row));
        q_in[e] = augment(row, features.mat.row(row), ex_rng);
        k_in[e] = augment(row, features.mat.row(row), ex_rng);
      }

      const Matrix negatives = state.queue.snapshot();
      Matrix keys(bn, emb_dim);
      const std::size_t n_chunks = (bn + kGradChunk - 1) / kGradChunk;
      std::vector<ExtractorGrads> chunk_grads(n_chunks);
      std::vector<double> chunk_loss(n_chunks, 0.0);
      std::exception_ptr eptr = nullptr;
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(n_chunks);
           ++ci) {
       try {
        chunk_grads[ci] = ExtractorGrads::zeros_like(res.params);
        const std::size_t lo = static_cast<std::size_t>(ci) * kGradChunk;
        const std::size_t hi = std::min(lo + kGradChunk, bn);
        for (std::size_t e = lo; e < hi; ++e) {
          std::vector<double> qe = forward(res.params, q_in[e]);
          std::vector<double> ke = forward(state.key_params, k_in[e]);
          std::copy(ke.begin(), ke.end(), keys.row(e).begin());
          auto mr =
              losses::moco_infonce(qe, ke, negatives, cfg.loss, cfg.eps_norm);
          backward_accumulate(res.params, q_in[e], mr.query_grad, 1.0,
                              &chunk_grads[ci]);
          chunk_loss[ci] += mr.loss;
        }
       } catch (...) {
#pragma omp critical
        if (!eptr) eptr = std::current_exception();
       }
      }
      if (eptr) std::rethrow_exception(eptr);

      ExtractorGrads gsum = ExtractorGrads::zeros_like(res.params);
      double loss_sum = 0.0;
      for (std::size_t ci = 0; ci < n_chunks; ++ci) {
        gsum.add(chunk_grads[ci]);
        loss_sum += chunk_loss[ci];
      }
      if (!std::isfinite(loss_sum))
        throw_error(ErrorCode::kNonFinite, "train_contrastive: loss diverged");
      ep_loss += loss_sum;
      ep_count += bn;

      gsum.scale(1.0 / static_cast<double>(bn));
      const double lr_now =
          lr_at(static_cast<double>(step) / static_cast<double>(total_steps),
                cfg.nominal_lr, cfg.schedule);
      sgd_step_all(&res.params, gsum, &vel, lr_now, cfg.sgd);
      momentum_update(&state, res.params);
      queue_push(&state, keys);
      res.max_queue_len = std::max(res.max_queue_len, state.queue.size());
    }
    res.epoch_losses.push_back(
        ep_count > 0 ? ep_loss / static_cast<double>(ep_count) : 0.0);
  }
  res.final_key_params = state.key_params;
  return res;
}

EmbeddingSet embed_set(const ExtractorParams& params,
                       const EmbeddingSet& features) {
  validate_embedding_set(features);
  if (features.dim() != params.input_dim)
    throw_error(ErrorCode::kDimMismatch, "embed_set: feature dim mismatch");
  EmbeddingSet out;
  out.ids = features.ids;
  out.mat = Matrix(features.size(), params.embedding_dim);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(features.size());
       ++i) {
    auto e = forward(params, features.mat.row(static_cast<std::size_t>(i)));
    std::copy(e.begin(), e.end(),
              out.mat.row(static_cast<std::size_t>(i)).begin());
  }
  return out;
}

void save_extractor(const ExtractorParams& params, const std::string& path) {
  EmbeddingSet flat;
  flat.ids = {"extractor"};
  flat.mat = Matrix(1, params.n_params());
  std::size_t off = 0;
  for (auto blk : params.blocks()) {
    std::copy(blk.begin(), blk.end(), flat.mat.row(0).begin() + off);
    off += blk.size();
  }
  write_embeddings(flat, path);

  std::ofstream meta(path + ".meta", std::ios::trunc);
  if (!meta)
    throw_error(ErrorCode::kIoFailure, "cannot write " + path + ".meta");
  meta << "input_dim=" << params.input_dim << "\n"
       << "hidden_dim=" << params.hidden_dim << "\n"
       << "embedding_dim=" << params.embedding_dim << "\n";
  if (!meta.good())
    throw_error(ErrorCode::kIoFailure, "write failed: " + path + ".meta");
}

ExtractorParams load_extractor(const std::string& path) {
  std::ifstream meta(path + ".meta");
  if (!meta)
    throw_error(ErrorCode::kIoFailure, "cannot read " + path + ".meta");
  std::size_t input_dim = 0, hidden_dim = 0, embedding_dim = 0;
  std::string line;
  while (std::getline(meta, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw_error(ErrorCode::kParseError, "bad meta line: " + line);
    const std::string key = line.substr(0, eq);
    std::size_t value = 0;
    try {
      value = std::stoull(line.substr(eq + 1));
    } catch (const std::exception&) {
      throw_error(ErrorCode::kParseError, "bad meta value: " + line);
    }
    if (key == "input_dim")
      input_dim = value;
    else if (key == "hidden_dim")
      hidden_dim = value;
    else if (key == "embedding_dim")
      embedding_dim = value;
    else
      throw_error(ErrorCode::kParseError, "unknown meta key: " + key);
  }
  if (input_dim == 0 || embedding_dim == 0)
    throw_error(ErrorCode::kMalformedHeader, "incomplete meta: " + path);

  ExtractorParams p =
      hidden_dim == 0
          ? ExtractorParams::linear(input_dim, embedding_dim)
          : ExtractorParams::with_hidden(input_dim, hidden_dim, embedding_dim);
  EmbeddingSet flat = read_embeddings(path);
  if (flat.size() != 1 || flat.dim() != p.n_params())
    throw_error(ErrorCode::kDimMismatch,
                "checkpoint does not match meta shape: " + path);
  std::size_t off = 0;
  for (auto blk : p.blocks()) {
    auto src = flat.mat.row(0).subspan(off, blk.size());
    std::copy(src.begin(), src.end(), blk.begin());
    off += blk.size();
  }
  return p;
}

}  // namespace sslsv::trainer

// sslsv/trainer.h

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

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sslsv/losses.h"
#include "sslsv/rng.h"
#include "sslsv/types.h"

namespace sslsv::trainer {

// Small embedding extractor: an affine map, optionally with one tanh
// hidden layer (hidden_dim == 0 means linear).
struct ExtractorParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t embedding_dim = 0;
  Matrix w1;                // linear: emb x in; hidden: hidden x in
  std::vector<double> b1;   // linear: emb;      hidden: hidden
  Matrix w2;                // hidden only: emb x hidden
  std::vector<double> b2;   // hidden only: emb

  static ExtractorParams linear(std::size_t input_dim,
                                std::size_t embedding_dim);
  static ExtractorParams with_hidden(std::size_t input_dim,
                                     std::size_t hidden_dim,
                                     std::size_t embedding_dim);

  bool is_linear() const { return hidden_dim == 0; }
  std::size_t n_params() const;

  // Mutable views of the parameter blocks, weights before biases.
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  // Marks which blocks are biases (aligned with blocks()).
  std::vector<bool> bias_blocks() const;

  friend bool operator==(const ExtractorParams&,
                         const ExtractorParams&) = default;
};

void init_identity(ExtractorParams* p);  // square linear maps only
void init_gaussian(ExtractorParams* p, Rng* rng);  // scale 1/sqrt(fan_in)

// Gradient (or velocity) storage with the same block layout as the params.
struct ExtractorGrads {
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
  std::vector<double> b2;

  static ExtractorGrads zeros_like(const ExtractorParams& p);
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  void add(const ExtractorGrads& other);
  void scale(double a);
};

std::vector<double> forward(const ExtractorParams& p,
                            std::span<const double> x);

struct BackwardResult {
  ExtractorGrads grads;
  std::vector<double> input_grad;
};

BackwardResult backward(const ExtractorParams& p, std::span<const double> x,
                        std::span<const double> upstream_grad);

// Accumulating form used by the training loops: adds weight * grads into
// *acc and returns nothing extra.
void backward_accumulate(const ExtractorParams& p, std::span<const double> x,
                         std::span<const double> upstream_grad, double weight,
                         ExtractorGrads* acc);

struct SgdConfig {
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1.0e-4;
  bool decay_biases = true;
};

// One SGD update on a flat block:
//   g' = g + wd * theta
//   v  = mu * v + g'
//   theta -= lr * (g' + mu * v)   (nesterov)
//   theta -= lr * v               (plain momentum)
void sgd_step(std::span<double> params, std::span<const double> grad,
              std::span<double> velocity, double lr, const SgdConfig& cfg,
              bool is_bias = false);

void sgd_step_all(ExtractorParams* params, const ExtractorGrads& grads,
                  ExtractorGrads* velocity, double lr, const SgdConfig& cfg);

struct LrSchedule {
  double warmup_frac = 0.10;
  double constant_frac = 0.2333;
  int n_decay_steps = 10;
  double decay_factor = 0.5;
  // With true (default), decay segment i runs at nominal * factor^i, so
  // the final segment sits at nominal/1024 for the default schedule; with
  // false the first segment stays at nominal and the last is nominal/512.
  bool decay_at_segment_start = true;
};

// Piecewise learning rate over normalized training progress in [0, 1]:
// linear warmup, constant plateau, then n_decay_steps equal segments each
// halving the rate.  progress == 1 is clamped into the last segment.
double lr_at(double progress, double nominal, const LrSchedule& sched);

// FIFO ring of key embeddings.
class MoCoQueue {
 public:
  MoCoQueue(std::size_t capacity, std::size_t dim)
      : capacity_(capacity), dim_(dim) {}

  std::size_t size() const { return rows_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }

  void push_row(std::span<const double> key);
  void push(const Matrix& keys);

  // Rows oldest to newest.
  Matrix snapshot() const;

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::deque<std::vector<double>> rows_;
};

struct MoCoState {
  ExtractorParams key_params;
  MoCoQueue queue;
  double momentum = 0.999;

  MoCoState(const ExtractorParams& init, std::size_t queue_capacity,
            double momentum_in)
      : key_params(init),
        queue(queue_capacity, init.embedding_dim),
        momentum(momentum_in) {}
};

// theta_key <- m * theta_key + (1 - m) * theta_query, every block.
void momentum_update(MoCoState* state, const ExtractorParams& query_params);

void queue_push(MoCoState* state, const Matrix& keys);

struct ExtractorShape {
  std::size_t hidden_dim = 0;
  std::size_t embedding_dim = 256;
};

enum class LossKind { kSoftmaxCe, kBiTempered };

// Deterministic per-example input transform; epoch and row index identify
// the draw so runs are reproducible.  Null means identity.
using ExampleTransform = std::function<std::vector<double>(
    std::size_t row, int epoch, std::span<const double> x)>;

struct ClassifierTrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double nominal_lr = 0.1;
  SgdConfig sgd;
  LrSchedule schedule;
  LossKind loss = LossKind::kBiTempered;
  losses::MarginConfig margin;
  losses::BiTemperedConfig bitempered;
  ExtractorShape shape;
  std::uint64_t seed = 0;
  double eps_norm = 1.0e-4;
};

struct ClassifierTrainResult {
  ExtractorParams params;
  Matrix representatives;  // one row per class, in the embedding space
  std::vector<double> epoch_losses;
};

// Supervised training against (pseudo-)labels: cosine between the
// length-normalized embedding and per-class representative vectors,
// margin logits, then the configured loss.  Representatives are trained
// jointly.  Per-utterance weights from `labels` scale each example's
// contribution; a batch with zero total weight performs no update.
ClassifierTrainResult train_classifier(const EmbeddingSet& features,
                                       const LabelSet& labels,
                                       const ClassifierTrainConfig& cfg,
                                       const ExtractorParams* init = nullptr,
                                       const ExampleTransform& transform = {});

// Produces two views per utterance per step; rng is the only source of
// randomness so runs are reproducible.
using AugmentSampler = std::function<std::vector<double>(
    std::size_t row, std::span<const double> x, Rng& rng)>;

struct ContrastiveTrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double nominal_lr = 0.1;
  SgdConfig sgd;
  LrSchedule schedule;
  losses::ContrastiveConfig loss{10.0, 4096};
  double moco_momentum = 0.999;
  ExtractorShape shape;
  std::uint64_t seed = 0;
  double eps_norm = 1.0e-4;
};

struct ContrastiveTrainResult {
  ExtractorParams params;
  ExtractorParams final_key_params;
  std::vector<double> epoch_losses;
  std::size_t max_queue_len = 0;
};

// MoCo loop: query/key encoders, InfoNCE against the negative queue,
// momentum update of the key encoder after every optimizer step, then the
// step's key embeddings are pushed into the queue.
ContrastiveTrainResult train_contrastive(const EmbeddingSet& features,
                                         const AugmentSampler& augment,
                                         const ContrastiveTrainConfig& cfg,
                                         const ExtractorParams* init = nullptr);

// Applies the extractor to every row; ids are carried over.
EmbeddingSet embed_set(const ExtractorParams& params,
                       const EmbeddingSet& features);

// Checkpoint: parameters in the embedding binary container (one row with
// all blocks concatenated) plus a "<path>.meta" text sidecar holding the
// shape.  Values are stored as f32 like any other embedding file.
void save_extractor(const ExtractorParams& params, const std::string& path);
ExtractorParams load_extractor(const std::string& path);

}  // namespace sslsv::trainer

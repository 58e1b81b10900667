// sslsv/losses.h

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

namespace sslsv::losses {

enum class MarginVariant {
  kSubtractive,  // z = s*(cos(theta) - m) for targets
  kAngular,      // z = s*cos(theta + m) for targets
};

struct MarginConfig {
  double scale = 40.0;
  double margin = 0.2;
  MarginVariant variant = MarginVariant::kSubtractive;
};

struct BiTemperedConfig {
  double t1 = 0.9;  // in (0, 1]
  double t2 = 1.1;  // >= 1
  int lambda_iters = 200;
  double lambda_tol = 1e-12;
};

struct ContrastiveConfig {
  double scale = 10.0;
  std::size_t queue_capacity = 65536;
};

// Margin-injected logit for one class.  cos_theta may exceed [-1,1] by at
// most 1e-6 (clamped); larger excursions are an error.  Non-target logits
// are s*cos(theta) in both variants.
double margin_logit(double cos_theta, bool is_target, const MarginConfig& cfg);

// d margin_logit / d cos_theta at the same point.
double margin_logit_grad(double cos_theta, bool is_target,
                         const MarginConfig& cfg);

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

// Cross-entropy with max-subtracted logsumexp:
//   loss = logsumexp(z) - z_target, grad = softmax(z) - onehot(target).
LossResult softmax_ce(std::span<const double> logits, std::size_t target);

// Tempered log/exp (natural log/exp at t = 1).
double log_t(double x, double t);
double exp_t(double x, double t);

struct TemperedSoftmax {
  std::vector<double> probs;
  double lambda = 0.0;
};

// Probabilities p_k = exp_t2(z_k - lambda) with lambda chosen by bisection
// so they sum to one.
TemperedSoftmax tempered_softmax(std::span<const double> logits,
                                 const BiTemperedConfig& cfg);

// Bi-tempered logistic loss of a one-hot target:
//   loss = -log_t1(p_c) - 1/(2-t1) + sum_k p_k^(2-t1) / (2-t1),
// which reduces to softmax_ce at t1 = t2 = 1.
LossResult bitempered_loss(std::span<const double> logits, std::size_t target,
                           const BiTemperedConfig& cfg);

struct MocoResult {
  double loss = 0.0;
  std::vector<double> query_grad;  // d loss / d query (raw, pre-normalization)
};

// InfoNCE over [positive | queue] with cosine logits scaled by cfg.scale.
// The queue rows are the negative keys; an empty queue gives loss 0.
MocoResult moco_infonce(std::span<const double> query,
                        std::span<const double> positive_key,
                        const Matrix& queue, const ContrastiveConfig& cfg,
                        double eps_norm = 1.0e-4);

}  // namespace sslsv::losses

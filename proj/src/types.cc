// sslsv/types.cc

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

#include "sslsv/types.h"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace sslsv {

bool valid_utterance_id(const std::string& id) {
  if (id.empty()) return false;
  return id.find('\t') == std::string::npos &&
         id.find('\n') == std::string::npos &&
         id.find('\r') == std::string::npos;
}

void check_utterance_id(const std::string& id) {
  if (!valid_utterance_id(id))
    throw_error(ErrorCode::kParseError,
                "invalid utterance id: \"" + id + "\"");
}

std::size_t EmbeddingSet::index_of(const std::string& id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end())
    throw_error(ErrorCode::kMissingId, "utterance not present: " + id);
  return static_cast<std::size_t>(it - ids.begin());
}

void validate_embedding_set(const EmbeddingSet& set) {
  if (set.ids.size() != set.mat.rows())
    throw_error(ErrorCode::kDimMismatch,
                "id count does not match row count");
  std::unordered_set<std::string> seen;
  for (const auto& id : set.ids) {
    check_utterance_id(id);
    if (!seen.insert(id).second)
      throw_error(ErrorCode::kDuplicateId, "duplicate utterance id: " + id);
  }
  for (double v : set.mat.data())
    if (!std::isfinite(v))
      throw_error(ErrorCode::kNonFinite, "non-finite embedding value");
}

void validate_trial_list(const TrialList& trials) {
  for (const auto& [e, t] : trials.pairs) {
    check_utterance_id(e);
    check_utterance_id(t);
  }
  if (trials.labels && trials.labels->size() != trials.pairs.size())
    throw_error(ErrorCode::kDimMismatch,
                "label count does not match trial count");
}

void validate_score_set(const ScoreSet& scores) {
  validate_trial_list(scores.trials);
  if (scores.scores.size() != scores.trials.size())
    throw_error(ErrorCode::kDimMismatch,
                "score count does not match trial count");
  for (double v : scores.scores)
    if (!std::isfinite(v))
      throw_error(ErrorCode::kNonFinite, "non-finite score");
}

std::uint32_t LabelSet::max_label() const {
  std::uint32_t m = 0;
  for (auto l : labels) m = std::max(m, l);
  return m;
}

void validate_label_set(const LabelSet& labels) {
  if (labels.ids.size() != labels.labels.size())
    throw_error(ErrorCode::kDimMismatch,
                "label count does not match id count");
  std::unordered_set<std::string> seen;
  for (const auto& id : labels.ids) {
    check_utterance_id(id);
    if (!seen.insert(id).second)
      throw_error(ErrorCode::kDuplicateId, "duplicate utterance id: " + id);
  }
  if (labels.weights) {
    if (labels.weights->size() != labels.ids.size())
      throw_error(ErrorCode::kDimMismatch,
                  "weight count does not match id count");
    for (double w : *labels.weights)
      if (!(w >= 0.0 && w <= 1.0))
        throw_error(ErrorCode::kInvalidArgument,
                    "weight outside [0,1]");
  }
}

}  // namespace sslsv

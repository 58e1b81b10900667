// sslsv/types.h

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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sslsv {

enum class ErrorCode {
  kMalformedHeader,
  kDimMismatch,
  kDuplicateId,
  kNonFinite,
  kParseError,
  kUnknownLabel,
  kMissingId,
  kInvalidArgument,
  kSingleClass,
  kNoConvergence,
  kIoFailure,
  kInternal,
};

// All data-level failures are reported through this type; the code
// distinguishes the conditions callers may want to branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_error(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

// Internal consistency checks that stay on in release builds.
#define SSLSV_CHECK(cond, msg)                                        \
  do {                                                                \
    if (!(cond))                                                      \
      ::sslsv::throw_error(::sslsv::ErrorCode::kInternal,             \
                           std::string("check failed: ") + (msg));    \
  } while (0)

// Dense row-major matrix of doubles.  Storage precision on disk is f32
// (see io.h) but all in-memory arithmetic is double.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Utterance ids are plain strings; they must be non-empty and TSV-safe.
bool valid_utterance_id(const std::string& id);
void check_utterance_id(const std::string& id);

// N utterances with a D-dimensional vector each (features or embeddings).
struct EmbeddingSet {
  std::vector<std::string> ids;
  Matrix mat;

  std::size_t size() const { return ids.size(); }
  std::size_t dim() const { return mat.cols(); }

  // Index of an id, or an error if absent.
  std::size_t index_of(const std::string& id) const;

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

// Throws unless ids are unique and valid, shapes agree and data is finite.
void validate_embedding_set(const EmbeddingSet& set);

struct TrialList {
  std::vector<std::pair<std::string, std::string>> pairs;  // (enroll, test)
  // 1 = target, 0 = nontarget; present for all pairs or for none.
  std::optional<std::vector<std::uint8_t>> labels;

  std::size_t size() const { return pairs.size(); }

  friend bool operator==(const TrialList&, const TrialList&) = default;
};

void validate_trial_list(const TrialList& trials);

struct ScoreSet {
  TrialList trials;
  std::vector<double> scores;  // one per trial pair

  std::size_t size() const { return scores.size(); }

  friend bool operator==(const ScoreSet&, const ScoreSet&) = default;
};

void validate_score_set(const ScoreSet& scores);

// Per-utterance integer labels (pseudo-speakers or synthetic truth) with
// optional weights in [0,1].
struct LabelSet {
  std::vector<std::string> ids;
  std::vector<std::uint32_t> labels;
  std::optional<std::vector<double>> weights;

  std::size_t size() const { return ids.size(); }
  std::uint32_t max_label() const;

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

void validate_label_set(const LabelSet& labels);

}  // namespace sslsv

// sslsv/io.h

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

#include <string>
#include <vector>

#include "sslsv/types.h"

// File formats.
//
// Embeddings (binary, little-endian):
//   bytes 0..3   magic "EMB1"
//   bytes 4..7   uint32 dim
//   bytes 8..15  uint64 count
//   then count*dim float32 values, row-major.
// Utterance ids live in a text sidecar "<path>.ids", one id per line, in
// row order.  Values are stored as f32; doubles are rounded on write, so
// read(write(s)) == s holds exactly when s holds f32-representable values.
//
// Trials (TSV, UTF-8, "\n"):  enroll \t test [\t label]
//   label is "target"/"nontarget" (also "1"/"0").  A file mixes labeled
//   and unlabeled lines never: the first line fixes the column count.
//
// Scores (TSV):  enroll \t test \t score, score printed with 17
// significant digits so a 64-bit value round-trips.  Lines starting with
// '#' are comments (normalization parameters are recorded there).
//
// Labels (TSV):  utterance \t label [\t weight]

namespace sslsv {

void write_embeddings(const EmbeddingSet& set, const std::string& path);
EmbeddingSet read_embeddings(const std::string& path);

TrialList read_trials(const std::string& path);
void write_trials(const TrialList& trials, const std::string& path);

void write_scores(const ScoreSet& scores, const std::string& path,
                  const std::vector<std::string>& header_comments = {});
ScoreSet read_scores(const std::string& path);

LabelSet read_labels(const std::string& path);
void write_labels(const LabelSet& labels, const std::string& path);

// Formats a double with enough digits to round-trip (17 significant).
std::string format_full(double v);

}  // namespace sslsv

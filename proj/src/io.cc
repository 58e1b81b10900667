// sslsv/io.cc

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

#include "sslsv/io.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sslsv {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

double parse_double(const std::string& s, const std::string& context) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw_error(ErrorCode::kParseError,
                "bad numeric field \"" + s + "\" in " + context);
  return v;
}

}  // namespace

std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_embeddings(const EmbeddingSet& set, const std::string& path) {
  validate_embedding_set(set);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_error(ErrorCode::kIoFailure, "cannot open for write: " + path);
  os.write(kMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(set.dim()));
  put_u64(os, set.size());
  const auto& data = set.mat.data();
  std::vector<unsigned char> buf(data.size() * 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    float f = static_cast<float>(data[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int k = 0; k < 4; ++k)
      buf[i * 4 + k] = static_cast<unsigned char>(bits >> (8 * k));
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
  if (!os) throw_error(ErrorCode::kIoFailure, "write failed: " + path);

  std::ofstream ids(path + ".ids", std::ios::binary);
  if (!ids)
    throw_error(ErrorCode::kIoFailure, "cannot open for write: " + path + ".ids");
  for (const auto& id : set.ids) ids << id << "\n";
  if (!ids) throw_error(ErrorCode::kIoFailure, "write failed: " + path + ".ids");
}

EmbeddingSet read_embeddings(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_error(ErrorCode::kIoFailure, "cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw_error(ErrorCode::kMalformedHeader, "bad magic in " + path);
  std::uint32_t dim = get_u32(is);
  std::uint64_t count = get_u64(is);
  if (!is) throw_error(ErrorCode::kMalformedHeader, "truncated header in " + path);

  EmbeddingSet set;
  set.mat = Matrix(count, dim);
  std::vector<unsigned char> buf(static_cast<std::size_t>(count) * dim * 4);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size())
    throw_error(ErrorCode::kMalformedHeader, "truncated payload in " + path);
  is.peek();
  if (!is.eof())
    throw_error(ErrorCode::kMalformedHeader, "trailing bytes in " + path);
  auto& data = set.mat.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k)
      bits |= static_cast<std::uint32_t>(buf[i * 4 + k]) << (8 * k);
    float f;
    std::memcpy(&f, &bits, 4);
    data[i] = static_cast<double>(f);
  }

  std::ifstream ids(path + ".ids", std::ios::binary);
  if (!ids) throw_error(ErrorCode::kIoFailure, "cannot open: " + path + ".ids");
  std::string line;
  while (std::getline(ids, line)) set.ids.push_back(strip_cr(line));
  if (set.ids.size() != count)
    throw_error(ErrorCode::kDimMismatch,
                "id sidecar row count does not match header in " + path);
  validate_embedding_set(set);
  return set;
}

TrialList read_trials(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_error(ErrorCode::kIoFailure, "cannot open: " + path);
  TrialList trials;
  std::string line;
  int ncols = 0;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != 2 && fields.size() != 3)
      throw_error(ErrorCode::kParseError,
                  path + ":" + std::to_string(lineno) +
                      ": expected 2 or 3 tab-separated fields");
    if (ncols == 0) {
      ncols = static_cast<int>(fields.size());
      if (ncols == 3) trials.labels.emplace();
    } else if (static_cast<int>(fields.size()) != ncols) {
      throw_error(ErrorCode::kParseError,
                  path + ":" + std::to_string(lineno) +
                      ": inconsistent column count");
    }
    check_utterance_id(fields[0]);
    check_utterance_id(fields[1]);
    trials.pairs.emplace_back(fields[0], fields[1]);
    if (ncols == 3) {
      const std::string& tok = fields[2];
      std::uint8_t lab;
      if (tok == "target" || tok == "1")
        lab = 1;
      else if (tok == "nontarget" || tok == "0")
        lab = 0;
      else
        throw_error(ErrorCode::kUnknownLabel,
                    path + ":" + std::to_string(lineno) +
                        ": unknown label token \"" + tok + "\"");
      trials.labels->push_back(lab);
    }
  }
  validate_trial_list(trials);
  return trials;
}

void write_trials(const TrialList& trials, const std::string& path) {
  validate_trial_list(trials);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_error(ErrorCode::kIoFailure, "cannot open for write: " + path);
  for (std::size_t i = 0; i < trials.pairs.size(); ++i) {
    os << trials.pairs[i].first << "\t" << trials.pairs[i].second;
    if (trials.labels)
      os << "\t" << ((*trials.labels)[i] ? "target" : "nontarget");
    os << "\n";
  }
  if (!os) throw_error(ErrorCode::kIoFailure, "write failed: " + path);
}

void write_scores(const ScoreSet& scores, const std::string& path,
                  const std::vector<std::string>& header_comments) {
  validate_score_set(scores);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_error(ErrorCode::kIoFailure, "cannot open for write: " + path);
  for (const auto& c : header_comments) os << "# " << c << "\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    os << scores.trials.pairs[i].first << "\t" << scores.trials.pairs[i].second
       << "\t" << format_full(scores.scores[i]) << "\n";
  }
  if (!os) throw_error(ErrorCode::kIoFailure, "write failed: " + path);
}

ScoreSet read_scores(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_error(ErrorCode::kIoFailure, "cannot open: " + path);
  ScoreSet out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3)
      throw_error(ErrorCode::kParseError,
                  path + ":" + std::to_string(lineno) +
                      ": expected 3 tab-separated fields");
    check_utterance_id(fields[0]);
    check_utterance_id(fields[1]);
    out.trials.pairs.emplace_back(fields[0], fields[1]);
    out.scores.push_back(parse_double(fields[2], path + ":" + std::to_string(lineno)));
  }
  validate_score_set(out);
  return out;
}

LabelSet read_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_error(ErrorCode::kIoFailure, "cannot open: " + path);
  LabelSet out;
  std::string line;
  int ncols = 0;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != 2 && fields.size() != 3)
      throw_error(ErrorCode::kParseError,
                  path + ":" + std::to_string(lineno) +
                      ": expected 2 or 3 tab-separated fields");
    if (ncols == 0) {
      ncols = static_cast<int>(fields.size());
      if (ncols == 3) out.weights.emplace();
    } else if (static_cast<int>(fields.size()) != ncols) {
      throw_error(ErrorCode::kParseError,
                  path + ":" + std::to_string(lineno) +
                      ": inconsistent column count");
    }
    check_utterance_id(fields[0]);
    out.ids.push_back(fields[0]);
    double lab = parse_double(fields[1], path + ":" + std::to_string(lineno));
    if (lab < 0 || lab != std::floor(lab))
      throw_error(ErrorCode::kParseError,
                  path + ":" + std::to_string(lineno) +
                      ": label must be a non-negative integer");
    out.labels.push_back(static_cast<std::uint32_t>(lab));
    if (ncols == 3)
      out.weights->push_back(
          parse_double(fields[2], path + ":" + std::to_string(lineno)));
  }
  validate_label_set(out);
  return out;
}

void write_labels(const LabelSet& labels, const std::string& path) {
  validate_label_set(labels);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_error(ErrorCode::kIoFailure, "cannot open for write: " + path);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    os << labels.ids[i] << "\t" << labels.labels[i];
    if (labels.weights) os << "\t" << format_full((*labels.weights)[i]);
    os << "\n";
  }
  if (!os) throw_error(ErrorCode::kIoFailure, "write failed: " + path);
}

}  // namespace sslsv

// sslsv/pipeline.cc

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

#include "sslsv/pipeline.h"

#include <algorithm>
#include <cerrno>
#include <climits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "sslsv/io.h"
#include "sslsv/metrics.h"
#include "sslsv/scoring.h"

namespace sslsv::pipeline {

namespace {

// Sub-seed derivation (splitmix64 over mixed-in words); every stage of a
// run draws from its own stream so stages stay independent of each other.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                       std::uint64_t b = 0) {
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

constexpr std::uint64_t kSaltSynth = 1;
constexpr std::uint64_t kSaltStage1 = 2;
constexpr std::uint64_t kSaltCluster = 3;
constexpr std::uint64_t kSaltTrainA = 4;
constexpr std::uint64_t kSaltTrainB = 5;
constexpr std::uint64_t kSaltChannelA = 6;
constexpr std::uint64_t kSaltCohort = 7;

std::vector<double> unit_direction(std::size_t dim, Rng* rng) {
  std::vector<double> v = rng->gaussian_vector(dim);
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  while (n == 0.0) {
    v = rng->gaussian_vector(dim);
    n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
  }
  for (double& x : v) x /= n;
  return v;
}

std::string utt_id(const char* prefix, std::size_t speaker, std::size_t utt) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%03zu_utt%03zu", prefix, speaker, utt);
  return buf;
}

}  // namespace

std::vector<double> augment(std::span<const double> x, std::size_t channel,
                            const ChannelBank& bank, const AugmentConfig& cfg,
                            Rng* rng) {
  if (channel >= bank.n_channels())
    throw_error(ErrorCode::kInvalidArgument, "augment: bad channel index");
  if (bank.gain.cols() != x.size() || bank.offset.cols() != x.size())
    throw_error(ErrorCode::kDimMismatch, "augment: channel dim mismatch");
  SSLSV_CHECK(cfg.chunk_scale > 0.0, "chunk_scale must be positive");
  std::vector<double> out(x.begin(), x.end());
  if (channel == 0) return out;
  const double noise = cfg.noise_level / std::sqrt(cfg.chunk_scale);
  auto g = bank.gain.row(channel);
  auto o = bank.offset.row(channel);
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = g[k] * out[k] + o[k] + noise * rng->gaussian();
  return out;
}

SynthData synth_generate(const SynthConfig& cfg) {
  if (cfg.n_speakers < 2 || cfg.val_speakers < 2)
    throw_error(ErrorCode::kInvalidArgument,
                "synth_generate: need at least two speakers per split");
  if (cfg.utts_per_speaker < 1 || cfg.val_utts_per_speaker < 2)
    throw_error(ErrorCode::kInvalidArgument,
                "synth_generate: too few utterances per speaker");
  if (!(cfg.between_speaker_spread > 0.0) ||
      !(cfg.within_speaker_spread > 0.0))
    throw_error(ErrorCode::kInvalidArgument,
                "synth_generate: spreads must be positive");
  if (cfg.feature_dim < 2 || cfg.n_channels < 1 || cfg.n_trials < 2)
    throw_error(ErrorCode::kInvalidArgument, "synth_generate: bad config");

  Rng rng(cfg.seed);
  const std::size_t d = cfg.feature_dim;
  SynthData data;

  // Channel bank; channel 0 stays the identity.
  data.channels.gain = Matrix(cfg.n_channels, d);
  data.channels.offset = Matrix(cfg.n_channels, d);
  for (std::size_t k = 0; k < d; ++k) data.channels.gain(0, k) = 1.0;
  for (std::size_t c = 1; c < cfg.n_channels; ++c)
    for (std::size_t k = 0; k < d; ++k) {
      data.channels.gain(c, k) = 1.0 + cfg.channel_gain_spread * rng.gaussian();
      data.channels.offset(c, k) = cfg.channel_offset_spread * rng.gaussian();
    }

  AugmentConfig acfg;
  acfg.noise_level = cfg.noise_level;

  auto make_split = [&](const char* prefix, std::size_t n_spk,
                        std::size_t n_utt, EmbeddingSet* clean,
                        EmbeddingSet* baked,
                        std::vector<std::uint32_t>* channels,
                        LabelSet* labels) {
    const std::size_t n = n_spk * n_utt;
    if (clean) clean->mat = Matrix(n, d);
    baked->mat = Matrix(n, d);
    std::size_t row = 0;
    for (std::size_t s = 0; s < n_spk; ++s) {
      std::vector<double> mean = unit_direction(d, &rng);
      for (double& m : mean) m *= cfg.between_speaker_spread;
      for (std::size_t u = 0; u < n_utt; ++u, ++row) {
        std::string id = utt_id(prefix, s, u);
        std::vector<double> x(d);
        for (std::size_t k = 0; k < d; ++k)
          x[k] = mean[k] + cfg.within_speaker_spread * rng.gaussian();
        std::uint32_t ch =
            static_cast<std::uint32_t>(rng.uniform_int(cfg.n_channels));
        std::vector<double> xb = augment(x, ch, data.channels, acfg, &rng);
        if (clean) {
          clean->ids.push_back(id);
          std::copy(x.begin(), x.end(), clean->mat.row(row).begin());
        }
        baked->ids.push_back(id);
        std::copy(xb.begin(), xb.end(), baked->mat.row(row).begin());
        if (channels) channels->push_back(ch);
        if (labels) {
          labels->ids.push_back(id);
          labels->labels.push_back(static_cast<std::uint32_t>(s));
        }
      }
    }
  };

  make_split("spk", cfg.n_speakers, cfg.utts_per_speaker, &data.train_clean,
             &data.train_baked, &data.train_channels, &data.train_labels);
  make_split("val", cfg.val_speakers, cfg.val_utts_per_speaker, nullptr,
             &data.val, nullptr, nullptr);

  // Alternating target/nontarget validation trials.
  auto val_id = [&](std::size_t s, std::size_t u) { return utt_id("val", s, u); };
  data.trials.labels.emplace();
  for (std::size_t k = 0; k < cfg.n_trials; ++k) {
    if (k % 2 == 0) {
      std::size_t s = rng.uniform_int(cfg.val_speakers);
      std::size_t u1 = rng.uniform_int(cfg.val_utts_per_speaker);
      std::size_t u2 = rng.uniform_int(cfg.val_utts_per_speaker - 1);
      if (u2 >= u1) ++u2;
      data.trials.pairs.emplace_back(val_id(s, u1), val_id(s, u2));
      data.trials.labels->push_back(1);
    } else {
      std::size_t s1 = rng.uniform_int(cfg.val_speakers);
      std::size_t s2 = rng.uniform_int(cfg.val_speakers - 1);
      if (s2 >= s1) ++s2;
      std::size_t u1 = rng.uniform_int(cfg.val_utts_per_speaker);
      std::size_t u2 = rng.uniform_int(cfg.val_utts_per_speaker);
      data.trials.pairs.emplace_back(val_id(s1, u1), val_id(s2, u2));
      data.trials.labels->push_back(0);
    }
  }

  validate_embedding_set(data.train_clean);
  validate_embedding_set(data.train_baked);
  validate_embedding_set(data.val);
  validate_trial_list(data.trials);
  validate_label_set(data.train_labels);
  return data;
}

PipelineConfig default_config() {
  PipelineConfig cfg;
  // Field defaults are the shipped experiment; the Table-3-style ad-hoc
  // iteration modifications live in the override sections.
  IterationOverride it2;
  it2.nominal_lr = 0.125;
  cfg.overrides[2] = it2;
  IterationOverride it3;
  it3.concat_labels = true;
  cfg.overrides[3] = it3;
  cfg.fusion_members = {"iter2_A", "iter2_B", "iter3_A", "iter3_B"};
  return cfg;
}

namespace {

std::uint64_t parse_u64(const std::string& v) {
  if (v.empty()) throw_error(ErrorCode::kParseError, "empty integer value");
  char* end = nullptr;
  errno = 0;
  unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || end != v.c_str() + v.size())
    throw_error(ErrorCode::kParseError, "bad integer: " + v);
  return static_cast<std::uint64_t>(x);
}

int parse_int(const std::string& v) {
  if (v.empty()) throw_error(ErrorCode::kParseError, "empty integer value");
  char* end = nullptr;
  errno = 0;
  long x = std::strtol(v.c_str(), &end, 10);
  if (errno != 0 || end != v.c_str() + v.size() || x < INT_MIN || x > INT_MAX)
    throw_error(ErrorCode::kParseError, "bad integer: " + v);
  return static_cast<int>(x);
}

double parse_double(const std::string& v) {
  if (v.empty()) throw_error(ErrorCode::kParseError, "empty numeric value");
  char* end = nullptr;
  errno = 0;
  double x = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || !std::isfinite(x))
    throw_error(ErrorCode::kParseError, "bad number: " + v);
  return x;
}

bool parse_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw_error(ErrorCode::kParseError, "bad boolean: " + v);
}

trainer::LossKind parse_loss(const std::string& v) {
  if (v == "softmax") return trainer::LossKind::kSoftmaxCe;
  if (v == "bitempered") return trainer::LossKind::kBiTempered;
  throw_error(ErrorCode::kParseError, "bad loss: " + v);
}

losses::MarginVariant parse_variant(const std::string& v) {
  if (v == "subtractive") return losses::MarginVariant::kSubtractive;
  if (v == "angular") return losses::MarginVariant::kAngular;
  throw_error(ErrorCode::kParseError, "bad margin variant: " + v);
}

std::string loss_name(trainer::LossKind k) {
  return k == trainer::LossKind::kSoftmaxCe ? "softmax" : "bitempered";
}

std::string variant_name(losses::MarginVariant v) {
  return v == losses::MarginVariant::kSubtractive ? "subtractive" : "angular";
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

// Applies a key in a Stage2Settings-shaped scope; returns false if the
// key is not one of them.
bool apply_stage2_key(Stage2Settings* s, const std::string& key,
                      const std::string& value) {
  if (key == "epochs")
    s->epochs = parse_int(value);
  else if (key == "nominal_lr")
    s->nominal_lr = parse_double(value);
  else if (key == "loss")
    s->loss = parse_loss(value);
  else if (key == "margin")
    s->margin = parse_double(value);
  else if (key == "margin_variant")
    s->margin_variant = parse_variant(value);
  else if (key == "loss_scale")
    s->loss_scale = parse_double(value);
  else if (key == "t1")
    s->t1 = parse_double(value);
  else if (key == "t2")
    s->t2 = parse_double(value);
  else if (key == "init_from_previous")
    s->init_from_previous = parse_bool(value);
  else if (key == "concat_labels")
    s->concat_labels = parse_bool(value);
  else if (key == "chunk_scale")
    s->chunk_scale = parse_double(value);
  else if (key == "agreement_downweight")
    s->agreement_downweight = parse_double(value);
  else
    return false;
  return true;
}

void apply_override_key(IterationOverride* o, const std::string& key,
                        const std::string& value) {
  if (key == "epochs")
    o->epochs = parse_int(value);
  else if (key == "nominal_lr")
    o->nominal_lr = parse_double(value);
  else if (key == "loss")
    o->loss = parse_loss(value);
  else if (key == "margin")
    o->margin = parse_double(value);
  else if (key == "margin_variant")
    o->margin_variant = parse_variant(value);
  else if (key == "loss_scale")
    o->loss_scale = parse_double(value);
  else if (key == "t1")
    o->t1 = parse_double(value);
  else if (key == "t2")
    o->t2 = parse_double(value);
  else if (key == "init_from_previous")
    o->init_from_previous = parse_bool(value);
  else if (key == "concat_labels")
    o->concat_labels = parse_bool(value);
  else if (key == "chunk_scale")
    o->chunk_scale = parse_double(value);
  else if (key == "agreement_downweight")
    o->agreement_downweight = parse_double(value);
  else
    throw_error(ErrorCode::kParseError,
                "key not allowed in an iteration section: " + key);
}

void apply_global_key(PipelineConfig* cfg, const std::string& key,
                      const std::string& value) {
  SynthConfig& sy = cfg->synth;
  if (key == "n_speakers")
    sy.n_speakers = parse_u64(value);
  else if (key == "utts_per_speaker")
    sy.utts_per_speaker = parse_u64(value);
  else if (key == "feature_dim")
    sy.feature_dim = parse_u64(value);
  else if (key == "between_speaker_spread")
    sy.between_speaker_spread = parse_double(value);
  else if (key == "within_speaker_spread")
    sy.within_speaker_spread = parse_double(value);
  else if (key == "n_channels")
    sy.n_channels = parse_u64(value);
  else if (key == "channel_gain_spread")
    sy.channel_gain_spread = parse_double(value);
  else if (key == "channel_offset_spread")
    sy.channel_offset_spread = parse_double(value);
  else if (key == "noise_level")
    sy.noise_level = parse_double(value);
  else if (key == "val_speakers")
    sy.val_speakers = parse_u64(value);
  else if (key == "val_utts_per_speaker")
    sy.val_utts_per_speaker = parse_u64(value);
  else if (key == "n_trials")
    sy.n_trials = parse_u64(value);
  else if (key == "seed")
    cfg->seed = parse_u64(value);
  else if (key == "embedding_dim")
    cfg->embedding_dim = parse_u64(value);
  else if (key == "hidden_dim")
    cfg->hidden_dim = parse_u64(value);
  else if (key == "stage1_epochs")
    cfg->stage1.epochs = parse_int(value);
  else if (key == "stage1_batch_size")
    cfg->stage1.batch_size = parse_int(value);
  else if (key == "stage1_lr")
    cfg->stage1.nominal_lr = parse_double(value);
  else if (key == "contrastive_scale")
    cfg->stage1.contrastive_scale = parse_double(value);
  else if (key == "queue_capacity")
    cfg->stage1.queue_capacity = parse_u64(value);
  else if (key == "moco_momentum")
    cfg->stage1.moco_momentum = parse_double(value);
  else if (key == "n_iterations")
    cfg->n_iterations = parse_int(value);
  else if (key == "n_pseudo")
    cfg->n_pseudo = parse_u64(value);
  else if (key == "kmeans_k")
    cfg->kmeans_k = parse_u64(value);
  else if (key == "kmeans_iters")
    cfg->kmeans_iters = parse_int(value);
  else if (key == "kmeans_restarts")
    cfg->kmeans_restarts = parse_int(value);
  else if (key == "batch_size")
    cfg->stage2.batch_size = parse_int(value);
  else if (apply_stage2_key(&cfg->stage2, key, value))
    ;  // handled
  else if (key == "momentum")
    cfg->momentum = parse_double(value);
  else if (key == "nesterov")
    cfg->nesterov = parse_bool(value);
  else if (key == "weight_decay")
    cfg->weight_decay = parse_double(value);
  else if (key == "decay_biases")
    cfg->decay_biases = parse_bool(value);
  else if (key == "decay_at_segment_start")
    cfg->decay_at_segment_start = parse_bool(value);
  else if (key == "cohort_size")
    cfg->cohort_size = parse_u64(value);
  else if (key == "drop_top")
    cfg->drop_top = parse_u64(value);
  else if (key == "use_top")
    cfg->use_top = parse_u64(value);
  else if (key == "p_target")
    cfg->p_target = parse_double(value);
  else if (key == "fusion_members") {
    cfg->fusion_members.clear();
    std::stringstream ss(value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) cfg->fusion_members.push_back(tok);
    }
  } else if (key.compare(0, 9, "iteration") == 0 &&
             key.find('.') != std::string::npos) {
    // Dotted form of an iteration override, as flatten_config emits.
    auto dot = key.find('.');
    int n = parse_int(key.substr(9, dot - 9));
    if (n < 1) throw_error(ErrorCode::kParseError, "bad override key: " + key);
    apply_override_key(&cfg->overrides[n], key.substr(dot + 1), value);
  } else {
    throw_error(ErrorCode::kParseError, "unknown config key: " + key);
  }
}

}  // namespace

PipelineConfig parse_config_text(const std::string& text) {
  // The text is a delta on the shipped defaults; keys it does not
  // mention keep their default_config() values.
  PipelineConfig cfg = default_config();

  std::istringstream is(text);
  std::string line;
  std::set<std::string> seen;
  std::set<int> declared;  // iterations the text itself touches
  int section = 0;  // 0 = global, otherwise iteration number
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw_error(ErrorCode::kParseError,
                    "line " + std::to_string(lineno) + ": bad section header");
      std::string inner = trim(line.substr(1, line.size() - 2));
      const std::string prefix = "iteration";
      if (inner.compare(0, prefix.size(), prefix) != 0)
        throw_error(ErrorCode::kParseError,
                    "line " + std::to_string(lineno) +
                        ": unknown section: " + inner);
      int n = parse_int(trim(inner.substr(prefix.size())));
      if (n < 1)
        throw_error(ErrorCode::kParseError,
                    "line " + std::to_string(lineno) +
                        ": iteration sections are 1-based");
      section = n;
      continue;
    }

    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw_error(ErrorCode::kParseError,
                  "line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw_error(ErrorCode::kParseError,
                  "line " + std::to_string(lineno) + ": empty key");
    std::string canon =
        section == 0 ? key : "iteration" + std::to_string(section) + "." + key;
    if (!seen.insert(canon).second)
      throw_error(ErrorCode::kParseError,
                  "line " + std::to_string(lineno) + ": duplicate key " + key);
    try {
      if (section == 0) {
        apply_global_key(&cfg, key, value);
        if (key.compare(0, 9, "iteration") == 0 &&
            key.find('.') != std::string::npos)
          declared.insert(parse_int(key.substr(9, key.find('.') - 9)));
      } else {
        apply_override_key(&cfg.overrides[section], key, value);
        declared.insert(section);
      }
    } catch (const Error& e) {
      throw_error(e.code(),
                  "line " + std::to_string(lineno) + ": " + e.what());
    }
  }

  if (cfg.n_iterations < 1)
    throw_error(ErrorCode::kInvalidArgument, "n_iterations must be >= 1");
  // Sections written in the text must reference real iterations; override
  // entries merely inherited from the defaults are dropped when a smaller
  // n_iterations cuts them off.
  for (auto it = cfg.overrides.begin(); it != cfg.overrides.end();) {
    if (it->first > cfg.n_iterations) {
      if (declared.count(it->first))
        throw_error(ErrorCode::kInvalidArgument,
                    "override section for iteration " +
                        std::to_string(it->first) + " beyond n_iterations");
      it = cfg.overrides.erase(it);
    } else {
      ++it;
    }
  }
  return cfg;
}

PipelineConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_error(ErrorCode::kIoFailure, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::vector<std::pair<std::string, std::string>> flatten_config(
    const PipelineConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  auto add = [&](const std::string& k, const std::string& v) {
    kv.emplace_back(k, v);
  };
  auto num = [](double v) { return format_full(v); };
  auto b2s = [](bool v) { return v ? std::string("true") : "false"; };

  add("seed", std::to_string(cfg.seed));
  const SynthConfig& sy = cfg.synth;
  add("n_speakers", std::to_string(sy.n_speakers));
  add("utts_per_speaker", std::to_string(sy.utts_per_speaker));
  add("feature_dim", std::to_string(sy.feature_dim));
  add("between_speaker_spread", num(sy.between_speaker_spread));
  add("within_speaker_spread", num(sy.within_speaker_spread));
  add("n_channels", std::to_string(sy.n_channels));
  add("channel_gain_spread", num(sy.channel_gain_spread));
  add("channel_offset_spread", num(sy.channel_offset_spread));
  add("noise_level", num(sy.noise_level));
  add("val_speakers", std::to_string(sy.val_speakers));
  add("val_utts_per_speaker", std::to_string(sy.val_utts_per_speaker));
  add("n_trials", std::to_string(sy.n_trials));
  add("embedding_dim", std::to_string(cfg.embedding_dim));
  add("hidden_dim", std::to_string(cfg.hidden_dim));
  add("stage1_epochs", std::to_string(cfg.stage1.epochs));
  add("stage1_batch_size", std::to_string(cfg.stage1.batch_size));
  add("stage1_lr", num(cfg.stage1.nominal_lr));
  add("contrastive_scale", num(cfg.stage1.contrastive_scale));
  add("queue_capacity", std::to_string(cfg.stage1.queue_capacity));
  add("moco_momentum", num(cfg.stage1.moco_momentum));
  add("n_iterations", std::to_string(cfg.n_iterations));
  add("n_pseudo", std::to_string(cfg.n_pseudo));
  add("kmeans_k", std::to_string(cfg.kmeans_k));
  add("kmeans_iters", std::to_string(cfg.kmeans_iters));
  add("kmeans_restarts", std::to_string(cfg.kmeans_restarts));
  add("epochs", std::to_string(cfg.stage2.epochs));
  add("batch_size", std::to_string(cfg.stage2.batch_size));
  add("nominal_lr", num(cfg.stage2.nominal_lr));
  add("loss", loss_name(cfg.stage2.loss));
  add("margin", num(cfg.stage2.margin));
  add("margin_variant", variant_name(cfg.stage2.margin_variant));
  add("loss_scale", num(cfg.stage2.loss_scale));
  add("t1", num(cfg.stage2.t1));
  add("t2", num(cfg.stage2.t2));
  add("init_from_previous", b2s(cfg.stage2.init_from_previous));
  add("concat_labels", b2s(cfg.stage2.concat_labels));
  add("chunk_scale", num(cfg.stage2.chunk_scale));
  add("agreement_downweight", num(cfg.stage2.agreement_downweight));
  add("momentum", num(cfg.momentum));
  add("nesterov", b2s(cfg.nesterov));
  add("weight_decay", num(cfg.weight_decay));
  add("decay_biases", b2s(cfg.decay_biases));
  add("decay_at_segment_start", b2s(cfg.decay_at_segment_start));
  add("cohort_size", std::to_string(cfg.cohort_size));
  add("drop_top", std::to_string(cfg.drop_top));
  add("use_top", std::to_string(cfg.use_top));
  add("p_target", num(cfg.p_target));
  {
    std::string joined;
    for (const auto& m : cfg.fusion_members) {
      if (!joined.empty()) joined += ",";
      joined += m;
    }
    add("fusion_members", joined);
  }
  for (const auto& [it, o] : cfg.overrides) {
    const std::string p = "iteration" + std::to_string(it) + ".";
    if (o.epochs) add(p + "epochs", std::to_string(*o.epochs));
    if (o.nominal_lr) add(p + "nominal_lr", num(*o.nominal_lr));
    if (o.loss) add(p + "loss", loss_name(*o.loss));
    if (o.margin) add(p + "margin", num(*o.margin));
    if (o.margin_variant)
      add(p + "margin_variant", variant_name(*o.margin_variant));
    if (o.loss_scale) add(p + "loss_scale", num(*o.loss_scale));
    if (o.t1) add(p + "t1", num(*o.t1));
    if (o.t2) add(p + "t2", num(*o.t2));
    if (o.init_from_previous)
      add(p + "init_from_previous", b2s(*o.init_from_previous));
    if (o.concat_labels) add(p + "concat_labels", b2s(*o.concat_labels));
    if (o.chunk_scale) add(p + "chunk_scale", num(*o.chunk_scale));
    if (o.agreement_downweight)
      add(p + "agreement_downweight", num(*o.agreement_downweight));
  }
  return kv;
}

Stage2Settings resolve_settings(const PipelineConfig& cfg, int iteration) {
  SSLSV_CHECK(iteration >= 1 && iteration <= cfg.n_iterations,
              "iteration out of range");
  Stage2Settings s = cfg.stage2;
  auto it = cfg.overrides.find(iteration);
  if (it == cfg.overrides.end()) return s;
  const IterationOverride& o = it->second;
  if (o.epochs) s.epochs = *o.epochs;
  if (o.nominal_lr) s.nominal_lr = *o.nominal_lr;
  if (o.loss) s.loss = *o.loss;
  if (o.margin) s.margin = *o.margin;
  if (o.margin_variant) s.margin_variant = *o.margin_variant;
  if (o.loss_scale) s.loss_scale = *o.loss_scale;
  if (o.t1) s.t1 = *o.t1;
  if (o.t2) s.t2 = *o.t2;
  if (o.init_from_previous) s.init_from_previous = *o.init_from_previous;
  if (o.concat_labels) s.concat_labels = *o.concat_labels;
  if (o.chunk_scale) s.chunk_scale = *o.chunk_scale;
  if (o.agreement_downweight)
    s.agreement_downweight = *o.agreement_downweight;
  return s;
}

namespace {

std::string fmt_metric(double v) {
  if (v < 0.0) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

const char* kTsvHeader =
    "name\titeration\teer_raw\teer_zt\tmin_dcf_raw\tmin_dcf_zt\ttrain_loss"
    "\tagreement_ari";

}  // namespace

std::string render_report_text(const ExperimentReport& report) {
  std::ostringstream os;
  os << "speaker verification experiment report\n";
  os << "seed: " << report.seed << "\n\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-18s %5s %9s %9s %9s %9s %9s %7s\n",
                "system", "iter", "eer_raw", "eer_zt", "dcf_raw", "dcf_zt",
                "loss", "ari");
  os << buf;
  for (const auto& r : report.rows) {
    std::string iter = r.iteration < 0 ? "-" : std::to_string(r.iteration);
    std::snprintf(buf, sizeof(buf), "%-18s %5s %9s %9s %9s %9s %9s %7s\n",
                  r.name.c_str(), iter.c_str(), fmt_metric(r.eer_raw).c_str(),
                  fmt_metric(r.eer_zt).c_str(),
                  fmt_metric(r.min_dcf_raw).c_str(),
                  fmt_metric(r.min_dcf_zt).c_str(),
                  fmt_metric(r.train_loss).c_str(),
                  fmt_metric(r.agreement_ari).c_str());
    os << buf;
  }
  os << "\nconfig:\n";
  for (const auto& [k, v] : report.config_kv)
    os << "  " << k << " = " << v << "\n";
  return os.str();
}

std::string render_report_tsv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "# seed=" << report.seed << "\n";
  for (const auto& [k, v] : report.config_kv)
    os << "# config " << k << "=" << v << "\n";
  os << kTsvHeader << "\n";
  for (const auto& r : report.rows) {
    os << r.name << "\t" << r.iteration << "\t" << format_full(r.eer_raw)
       << "\t" << format_full(r.eer_zt) << "\t"
       << format_full(r.min_dcf_raw) << "\t"
       << format_full(r.min_dcf_zt) << "\t"
       << format_full(r.train_loss) << "\t"
       << format_full(r.agreement_ari) << "\n";
  }
  return os.str();
}

ExperimentReport parse_report_tsv(const std::string& text) {
  ExperimentReport rep;
  std::istringstream is(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::string body = trim(line.substr(1));
      const std::string seed_p = "seed=";
      const std::string conf_p = "config ";
      if (body.compare(0, seed_p.size(), seed_p) == 0) {
        rep.seed = parse_u64(body.substr(seed_p.size()));
      } else if (body.compare(0, conf_p.size(), conf_p) == 0) {
        std::string kvs = body.substr(conf_p.size());
        auto eq = kvs.find('=');
        if (eq == std::string::npos)
          throw_error(ErrorCode::kParseError, "bad config comment: " + line);
        rep.config_kv.emplace_back(kvs.substr(0, eq), kvs.substr(eq + 1));
      } else {
        throw_error(ErrorCode::kParseError, "bad report comment: " + line);
      }
      continue;
    }
    if (!header_seen) {
      if (line != kTsvHeader)
        throw_error(ErrorCode::kMalformedHeader,
                    "unexpected report header: " + line);
      header_seen = true;
      continue;
    }
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 8)
      throw_error(ErrorCode::kParseError, "bad report row: " + line);
    ReportRow r;
    r.name = cols[0];
    r.iteration = parse_int(cols[1]);
    auto col = [&](std::size_t i) {
      char* end = nullptr;
      double v = std::strtod(cols[i].c_str(), &end);
      if (cols[i].empty() || end != cols[i].c_str() + cols[i].size())
        throw_error(ErrorCode::kParseError, "bad report value: " + cols[i]);
      return v;
    };
    r.eer_raw = col(2);
    r.eer_zt = col(3);
    r.min_dcf_raw = col(4);
    r.min_dcf_zt = col(5);
    r.train_loss = col(6);
    r.agreement_ari = col(7);
    rep.rows.push_back(r);
  }
  if (!header_seen)
    throw_error(ErrorCode::kMalformedHeader, "report has no header row");
  return rep;
}

namespace {

// Training-feature subset used as the normalization cohort, fixed per
// experiment; systems embed these rows with their own extractor.
EmbeddingSet cohort_features(const SynthData& data,
                             const PipelineConfig& cfg) {
  const std::size_t size = std::min(cfg.cohort_size, data.train_baked.size());
  return scoring::cohort_select(data.train_baked, size,
                                mix_seed(cfg.seed, kSaltCohort));
}

scoring::NormConfig norm_config(const PipelineConfig& cfg) {
  scoring::NormConfig nc;
  nc.method = scoring::NormMethod::kZt;
  nc.adaptive.drop_top = cfg.drop_top;
  nc.adaptive.use_top = cfg.use_top;
  return nc;
}

struct SystemEval {
  ReportRow row;
  ScoreSet raw;
  ScoreSet zt;
};

SystemEval evaluate_embeddings(const std::string& name, int iteration,
                               const EmbeddingSet& emb_val,
                               const EmbeddingSet& emb_cohort,
                               const SynthData& data,
                               const PipelineConfig& cfg) {
  SystemEval ev;
  ev.raw = scoring::score_trials(emb_val, data.trials);
  ev.zt = scoring::normalize_scores(ev.raw, emb_val, emb_cohort,
                                    norm_config(cfg));
  metrics::DcfConfig dc;
  dc.p_target = cfg.p_target;
  ev.row.name = name;
  ev.row.iteration = iteration;
  ev.row.eer_raw = 100.0 * metrics::eer(ev.raw);
  ev.row.eer_zt = 100.0 * metrics::eer(ev.zt);
  ev.row.min_dcf_raw = metrics::min_dcf(ev.raw, dc);
  ev.row.min_dcf_zt = metrics::min_dcf(ev.zt, dc);
  return ev;
}

SystemEval evaluate_extractor(const std::string& name, int iteration,
                              const trainer::ExtractorParams& params,
                              const EmbeddingSet& cohort_feats,
                              const SynthData& data,
                              const PipelineConfig& cfg) {
  EmbeddingSet emb_val = trainer::embed_set(params, data.val);
  EmbeddingSet emb_cohort = trainer::embed_set(params, cohort_feats);
  return evaluate_embeddings(name, iteration, emb_val, emb_cohort, data, cfg);
}

trainer::SgdConfig sgd_config(const PipelineConfig& cfg) {
  trainer::SgdConfig sc;
  sc.momentum = cfg.momentum;
  sc.nesterov = cfg.nesterov;
  sc.weight_decay = cfg.weight_decay;
  sc.decay_biases = cfg.decay_biases;
  return sc;
}

trainer::LrSchedule lr_schedule(const PipelineConfig& cfg) {
  trainer::LrSchedule sched;
  sched.decay_at_segment_start = cfg.decay_at_segment_start;
  return sched;
}

}  // namespace

Stage1Result run_stage1(const SynthData& data, const PipelineConfig& cfg) {
  trainer::ContrastiveTrainConfig tc;
  tc.epochs = cfg.stage1.epochs;
  tc.batch_size = cfg.stage1.batch_size;
  tc.nominal_lr = cfg.stage1.nominal_lr;
  tc.sgd = sgd_config(cfg);
  tc.schedule = lr_schedule(cfg);
  tc.loss.scale = cfg.stage1.contrastive_scale;
  tc.loss.queue_capacity = cfg.stage1.queue_capacity;
  tc.moco_momentum = cfg.stage1.moco_momentum;
  tc.shape.hidden_dim = cfg.hidden_dim;
  tc.shape.embedding_dim = cfg.embedding_dim;
  tc.seed = mix_seed(cfg.seed, kSaltStage1);

  const ChannelBank& bank = data.channels;
  AugmentConfig acfg;
  acfg.noise_level = cfg.synth.noise_level;
  auto sampler = [&bank, acfg](std::size_t, std::span<const double> x,
                               Rng& rng) {
    std::size_t ch = rng.uniform_int(bank.n_channels());
    return augment(x, ch, bank, acfg, &rng);
  };

  auto tr = trainer::train_contrastive(data.train_clean, sampler, tc);

  Stage1Result res;
  res.params = tr.params;
  res.epoch_losses = tr.epoch_losses;
  SystemEval ev = evaluate_extractor("iter0", 0, tr.params,
                                     cohort_features(data, cfg), data, cfg);
  res.row = ev.row;
  if (!tr.epoch_losses.empty()) res.row.train_loss = tr.epoch_losses.back();
  return res;
}

Stage2Result run_stage2(const trainer::ExtractorParams& stage1_extractor,
                        const SynthData& data, const PipelineConfig& cfg) {
  SSLSV_CHECK(cfg.n_iterations >= 1, "n_iterations must be >= 1");
  EmbeddingSet cohort_feats = cohort_features(data, cfg);

  trainer::ExtractorParams a_params = stage1_extractor;
  trainer::ExtractorParams b_params = stage1_extractor;
  Stage2Result res;

  for (int iter = 1; iter <= cfg.n_iterations; ++iter) {
    Stage2Settings s = resolve_settings(cfg, iter);

    EmbeddingSet emb_a = trainer::embed_set(a_params, data.train_baked);
    EmbeddingSet emb_b = trainer::embed_set(b_params, data.train_baked);

    cluster::PseudoLabelConfig pl;
    pl.kmeans_k = cfg.kmeans_k;
    pl.n_clusters = cfg.n_pseudo;
    pl.kmeans_iters = cfg.kmeans_iters;
    pl.kmeans_restarts = cfg.kmeans_restarts;
    pl.seed = mix_seed(cfg.seed, kSaltCluster, static_cast<std::uint64_t>(iter));
    cluster::AgreementConfig ag;
    ag.downweight = s.agreement_downweight;
    cluster::ExchangeResult ex =
        cluster::cross_label_exchange(emb_a, emb_b, pl, ag, s.concat_labels);

    trainer::ClassifierTrainConfig tc;
    tc.epochs = s.epochs;
    tc.batch_size = s.batch_size;
    tc.nominal_lr = s.nominal_lr;
    tc.sgd = sgd_config(cfg);
    tc.schedule = lr_schedule(cfg);
    tc.loss = s.loss;
    tc.margin.scale = s.loss_scale;
    tc.margin.margin = s.margin;
    tc.margin.variant = s.margin_variant;
    tc.bitempered.t1 = s.t1;
    tc.bitempered.t2 = s.t2;
    tc.shape.hidden_dim = cfg.hidden_dim;
    tc.shape.embedding_dim = cfg.embedding_dim;

    // Network A redraws a channel per utterance each epoch; network B
    // trains on the channels baked at generation time.
    const ChannelBank& bank = data.channels;
    AugmentConfig acfg;
    acfg.noise_level = cfg.synth.noise_level;
    acfg.chunk_scale = s.chunk_scale;
    const std::uint64_t chan_seed =
        mix_seed(cfg.seed, kSaltChannelA, static_cast<std::uint64_t>(iter));
    trainer::ExampleTransform transform_a =
        [&bank, acfg, chan_seed](std::size_t row, int epoch,
                                 std::span<const double> x) {
          Rng rng(mix_seed(chan_seed, static_cast<std::uint64_t>(epoch), row));
          std::size_t ch = rng.uniform_int(bank.n_channels());
          return augment(x, ch, bank, acfg, &rng);
        };

    trainer::ClassifierTrainConfig tca = tc;
    tca.seed = mix_seed(cfg.seed, kSaltTrainA, static_cast<std::uint64_t>(iter));
    auto ra = trainer::train_classifier(
        data.train_clean, ex.labels_for_a, tca,
        s.init_from_previous ? &a_params : nullptr, transform_a);

    trainer::ClassifierTrainConfig tcb = tc;
    tcb.seed = mix_seed(cfg.seed, kSaltTrainB, static_cast<std::uint64_t>(iter));
    auto rb = trainer::train_classifier(
        data.train_baked, ex.labels_for_b, tcb,
        s.init_from_previous ? &b_params : nullptr, {});

    a_params = ra.params;
    b_params = rb.params;
    res.a_iters.push_back(a_params);
    res.b_iters.push_back(b_params);

    const std::string tag = "iter" + std::to_string(iter);
    SystemEval ea = evaluate_extractor(tag + "_A", iter, a_params,
                                       cohort_feats, data, cfg);
    ea.row.train_loss =
        ra.epoch_losses.empty() ? -1.0 : ra.epoch_losses.back();
    ea.row.agreement_ari = ex.agreement_ari;
    res.rows.push_back(ea.row);
    SystemEval eb = evaluate_extractor(tag + "_B", iter, b_params,
                                       cohort_feats, data, cfg);
    eb.row.train_loss =
        rb.epoch_losses.empty() ? -1.0 : rb.epoch_losses.back();
    eb.row.agreement_ari = ex.agreement_ari;
    res.rows.push_back(eb.row);
  }
  return res;
}

std::vector<ReportRow> run_fusion(
    const std::vector<std::pair<std::string, trainer::ExtractorParams>>&
        systems,
    const SynthData& data, const PipelineConfig& cfg) {
  if (systems.empty())
    throw_error(ErrorCode::kInvalidArgument, "run_fusion: no systems");
  EmbeddingSet cohort_feats = cohort_features(data, cfg);

  std::vector<ReportRow> rows;
  std::vector<ScoreSet> zt_sets;
  for (const auto& [name, params] : systems) {
    SystemEval ev =
        evaluate_extractor("fusion_" + name, -1, params, cohort_feats, data,
                           cfg);
    rows.push_back(ev.row);
    zt_sets.push_back(std::move(ev.zt));
  }

  ScoreSet fused = scoring::fuse(zt_sets);
  metrics::DcfConfig dc;
  dc.p_target = cfg.p_target;
  ReportRow fr;
  fr.name = "fused";
  fr.eer_zt = 100.0 * metrics::eer(fused);
  fr.min_dcf_zt = metrics::min_dcf(fused, dc);
  rows.push_back(fr);
  return rows;
}

PipelineOutcome run_pipeline(const PipelineConfig& cfg) {
  if (cfg.n_iterations < 1)
    throw_error(ErrorCode::kInvalidArgument, "n_iterations must be >= 1");
  for (const auto& [it, _] : cfg.overrides)
    if (it < 1 || it > cfg.n_iterations)
      throw_error(ErrorCode::kInvalidArgument,
                  "override for iteration " + std::to_string(it) +
                      " out of range");
  SynthConfig sc = cfg.synth;
  sc.seed = mix_seed(cfg.seed, kSaltSynth);
  SynthData data = synth_generate(sc);

  ExperimentReport report;
  report.seed = cfg.seed;
  report.config_kv = flatten_config(cfg);
  report.config_kv.emplace_back("derived_synth_seed",
                                std::to_string(sc.seed));
  report.config_kv.emplace_back(
      "derived_cohort_seed", std::to_string(mix_seed(cfg.seed, kSaltCohort)));

  // Raw-feature baseline: the validation features scored as they are.
  // Only the raw columns are reported; it is not a trained system and
  // does not take part in normalization comparisons.
  {
    ScoreSet raw = scoring::score_trials(data.val, data.trials);
    metrics::DcfConfig dc;
    dc.p_target = cfg.p_target;
    ReportRow base;
    base.name = "baseline";
    base.eer_raw = 100.0 * metrics::eer(raw);
    base.min_dcf_raw = metrics::min_dcf(raw, dc);
    report.rows.push_back(base);
  }

  Stage1Result s1 = run_stage1(data, cfg);
  report.rows.push_back(s1.row);

  Stage2Result s2 = run_stage2(s1.params, data, cfg);
  for (const auto& r : s2.rows) report.rows.push_back(r);

  if (!cfg.fusion_members.empty()) {
    std::vector<std::pair<std::string, trainer::ExtractorParams>> systems;
    for (const auto& m : cfg.fusion_members) {
      if (m == "iter0") {
        systems.emplace_back(m, s1.params);
        continue;
      }
      bool ok = false;
      for (int iter = 1; iter <= cfg.n_iterations && !ok; ++iter) {
        const std::string tag = "iter" + std::to_string(iter);
        if (m == tag + "_A") {
          systems.emplace_back(m, s2.a_iters[iter - 1]);
          ok = true;
        } else if (m == tag + "_B") {
          systems.emplace_back(m, s2.b_iters[iter - 1]);
          ok = true;
        }
      }
      if (!ok)
        throw_error(ErrorCode::kInvalidArgument,
                    "unknown fusion member: " + m);
    }
    for (const auto& r : run_fusion(systems, data, cfg))
      report.rows.push_back(r);
  }

  PipelineOutcome out;
  out.report = report;
  out.report_text = render_report_text(report);
  out.report_tsv = render_report_tsv(report);
  out.final_a = s2.a_iters.back();
  out.final_b = s2.b_iters.back();
  return out;
}

void write_outcome(const PipelineOutcome& outcome, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto write_text = [](const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw_error(ErrorCode::kIoFailure, "cannot write " + path);
    f << body;
    if (!f.good()) throw_error(ErrorCode::kIoFailure, "write failed: " + path);
  };
  write_text(out_dir + "/report.txt", outcome.report_text);
  write_text(out_dir + "/report.tsv", outcome.report_tsv);
  trainer::save_extractor(outcome.final_a, out_dir + "/extractor_a.bin");
  trainer::save_extractor(outcome.final_b, out_dir + "/extractor_b.bin");
}

}  // namespace sslsv::pipeline

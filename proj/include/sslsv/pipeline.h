// sslsv/pipeline.h

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
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sslsv/cluster.h"
#include "sslsv/losses.h"
#include "sslsv/rng.h"
#include "sslsv/trainer.h"
#include "sslsv/types.h"

namespace sslsv::pipeline {

// Synthetic speaker data: speaker means on a sphere, utterances around
// them, and a bank of channel perturbations standing in for recording
// conditions.
struct SynthConfig {
  std::size_t n_speakers = 50;
  std::size_t utts_per_speaker = 20;
  std::size_t feature_dim = 32;
  double between_speaker_spread = 1.0;
  double within_speaker_spread = 0.12;
  std::size_t n_channels = 4;  // channel 0 is the identity
  double channel_gain_spread = 0.25;
  double channel_offset_spread = 0.35;
  double noise_level = 0.05;
  std::size_t val_speakers = 20;
  std::size_t val_utts_per_speaker = 10;
  std::size_t n_trials = 1200;
  std::uint64_t seed = 0;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

// Per-channel affine perturbations; row 0 is gain 1, offset 0.
struct ChannelBank {
  Matrix gain;    // n_channels x dim
  Matrix offset;  // n_channels x dim

  std::size_t n_channels() const { return gain.rows(); }
};

struct AugmentConfig {
  double noise_level = 0.05;
  // Longer training chunks average down the observation noise; the noise
  // actually drawn is noise_level / sqrt(chunk_scale).
  double chunk_scale = 1.0;
};

// Channel 0 returns the input untouched; other channels apply the
// channel's affine map plus a fresh noise draw from rng.
std::vector<double> augment(std::span<const double> x, std::size_t channel,
                            const ChannelBank& bank, const AugmentConfig& cfg,
                            Rng* rng);

struct SynthData {
  EmbeddingSet train_clean;   // before any channel is applied
  EmbeddingSet train_baked;   // with the per-utterance channel applied
  std::vector<std::uint32_t> train_channels;
  LabelSet train_labels;      // true speakers, training side only
  EmbeddingSet val;           // validation features, channels applied
  TrialList trials;           // labeled validation trials, about half targets
  ChannelBank channels;
};

// Validation speakers are disjoint from training speakers and the trial
// list alternates target/nontarget pairs.
SynthData synth_generate(const SynthConfig& cfg);

struct Stage1Config {
  int epochs = 3;
  int batch_size = 64;
  double nominal_lr = 0.05;
  double contrastive_scale = 10.0;
  std::size_t queue_capacity = 1024;
  double moco_momentum = 0.999;

  friend bool operator==(const Stage1Config&, const Stage1Config&) = default;
};

// Effective per-iteration training settings after overrides.
struct Stage2Settings {
  int epochs = 25;
  int batch_size = 64;
  double nominal_lr = 0.1;
  trainer::LossKind loss = trainer::LossKind::kBiTempered;
  double margin = 0.2;
  losses::MarginVariant margin_variant = losses::MarginVariant::kSubtractive;
  double loss_scale = 40.0;
  double t1 = 0.9;
  double t2 = 1.1;
  bool init_from_previous = true;
  bool concat_labels = false;
  double chunk_scale = 1.0;
  double agreement_downweight = 0.5;

  friend bool operator==(const Stage2Settings&,
                         const Stage2Settings&) = default;
};

struct IterationOverride {
  std::optional<int> epochs;
  std::optional<double> nominal_lr;
  std::optional<trainer::LossKind> loss;
  std::optional<double> margin;
  std::optional<losses::MarginVariant> margin_variant;
  std::optional<double> loss_scale;
  std::optional<double> t1;
  std::optional<double> t2;
  std::optional<bool> init_from_previous;
  std::optional<bool> concat_labels;
  std::optional<double> chunk_scale;
  std::optional<double> agreement_downweight;

  friend bool operator==(const IterationOverride&,
                         const IterationOverride&) = default;
};

struct PipelineConfig {
  std::uint64_t seed = 42;
  SynthConfig synth;  // synth.seed is derived from seed when run
  std::size_t embedding_dim = 32;
  std::size_t hidden_dim = 0;
  Stage1Config stage1;

  int n_iterations = 3;
  std::size_t n_pseudo = 75;
  std::size_t kmeans_k = 225;
  int kmeans_iters = 50;
  int kmeans_restarts = 2;

  Stage2Settings stage2;  // defaults; per-iteration sections override
  std::map<int, IterationOverride> overrides;  // 1-based iteration keys

  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1.0e-4;
  bool decay_biases = true;
  bool decay_at_segment_start = true;

  std::size_t cohort_size = 1000;
  std::size_t drop_top = 10;
  std::size_t use_top = 200;
  double p_target = 0.05;

  std::vector<std::string> fusion_members;  // e.g. "iter2_A", "iter0"

  friend bool operator==(const PipelineConfig&,
                         const PipelineConfig&) = default;
};

// The shipped experiment; configs/default.conf mirrors this exactly.
PipelineConfig default_config();

// Flat "key = value" text with optional "[iteration N]" override
// sections; '#' starts a comment, unknown and duplicate keys are
// errors.  The text is a delta on default_config(); keys it does not
// mention keep their shipped values.
PipelineConfig parse_config_text(const std::string& text);
PipelineConfig parse_config_file(const std::string& path);

// Canonical flat key/value dump (parseable by parse_config_text).
std::vector<std::pair<std::string, std::string>> flatten_config(
    const PipelineConfig& cfg);

Stage2Settings resolve_settings(const PipelineConfig& cfg, int iteration);

// One evaluated system (or the fused combination).  Metrics are EER in
// percent and normalized minimum detection cost; -1 marks a field with
// no value for that row.
struct ReportRow {
  std::string name;
  int iteration = -1;
  double eer_raw = -1.0;
  double eer_zt = -1.0;
  double min_dcf_raw = -1.0;
  double min_dcf_zt = -1.0;
  double train_loss = -1.0;
  double agreement_ari = -1.0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct ExperimentReport {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config_kv;
  std::vector<ReportRow> rows;

  friend bool operator==(const ExperimentReport&,
                         const ExperimentReport&) = default;
};

// Human-readable table and machine-readable TSV; both renderings are
// deterministic down to the byte.
std::string render_report_text(const ExperimentReport& report);
std::string render_report_tsv(const ExperimentReport& report);
ExperimentReport parse_report_tsv(const std::string& text);

struct Stage1Result {
  trainer::ExtractorParams params;
  ReportRow row;  // named "iter0"
  std::vector<double> epoch_losses;
};

struct Stage2Result {
  std::vector<ReportRow> rows;
  std::vector<trainer::ExtractorParams> a_iters;  // [i] = after iteration i+1
  std::vector<trainer::ExtractorParams> b_iters;
};

Stage1Result run_stage1(const SynthData& data, const PipelineConfig& cfg);

Stage2Result run_stage2(const trainer::ExtractorParams& stage1_extractor,
                        const SynthData& data, const PipelineConfig& cfg);

// Scores every named system raw and zt-normed, then the fusion of the
// zt-normed score sets; appends one row per system plus the fused row.
std::vector<ReportRow> run_fusion(
    const std::vector<std::pair<std::string, trainer::ExtractorParams>>&
        systems,
    const SynthData& data, const PipelineConfig& cfg);

struct PipelineOutcome {
  ExperimentReport report;
  std::string report_text;
  std::string report_tsv;
  trainer::ExtractorParams final_a;
  trainer::ExtractorParams final_b;
};

// Full experiment: synth, stage 1, stage 2 iterations, fusion.
PipelineOutcome run_pipeline(const PipelineConfig& cfg);

// Writes report.txt, report.tsv and the two final extractor checkpoints
// (extractor_a.bin, extractor_b.bin) into out_dir.
void write_outcome(const PipelineOutcome& outcome, const std::string& out_dir);

}  // namespace sslsv::pipeline

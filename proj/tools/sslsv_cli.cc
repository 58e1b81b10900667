// sslsv/sslsv_cli.cc

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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sslsv/cluster.h"
#include "sslsv/io.h"
#include "sslsv/metrics.h"
#include "sslsv/pipeline.h"
#include "sslsv/scoring.h"
#include "sslsv/trainer.h"
#include "sslsv/types.h"

namespace {

using namespace sslsv;

// Every subcommand takes --seed; commands with no random choices accept
// and ignore it so scripts can pass it uniformly.
struct CommonArgs {
  std::uint64_t seed = 42;
  bool seed_given = false;
};

void add_seed(CLI::App* cmd, CommonArgs* common) {
  cmd->add_option("--seed", common->seed, "Random seed")
      ->each([common](const std::string&) { common->seed_given = true; });
}

pipeline::PipelineConfig load_config(const std::string& config_path,
                                     const CommonArgs& common) {
  pipeline::PipelineConfig cfg = config_path.empty()
                                     ? pipeline::default_config()
                                     : pipeline::parse_config_file(config_path);
  if (common.seed_given) cfg.seed = common.seed;
  return cfg;
}

int run_synth(const std::string& config_path, const CommonArgs& common,
              const std::string& out_dir) {
  pipeline::PipelineConfig cfg = load_config(config_path, common);
  pipeline::SynthConfig sc = cfg.synth;
  sc.seed = cfg.seed;
  pipeline::SynthData data = pipeline::synth_generate(sc);
  std::filesystem::create_directories(out_dir);
  write_embeddings(data.train_clean, out_dir + "/train_clean.bin");
  write_embeddings(data.train_baked, out_dir + "/train_baked.bin");
  write_embeddings(data.val, out_dir + "/val.bin");
  write_trials(data.trials, out_dir + "/trials.tsv");
  write_labels(data.train_labels, out_dir + "/train_speakers.tsv");
  std::cout << "wrote " << data.train_clean.size() << " train and "
            << data.val.size() << " val utterances to " << out_dir << "\n";
  return 0;
}

int run_embed(const std::string& extractor_path, const std::string& input,
              const std::string& output) {
  trainer::ExtractorParams params = trainer::load_extractor(extractor_path);
  EmbeddingSet in = read_embeddings(input);
  EmbeddingSet out = trainer::embed_set(params, in);
  write_embeddings(out, output);
  std::cout << "embedded " << out.size() << " utterances (dim " << out.dim()
            << ")\n";
  return 0;
}

int run_cluster(const std::string& input, const std::string& output,
                std::size_t n_clusters, std::size_t kmeans_k, int kmeans_iters,
                int restarts, const CommonArgs& common) {
  EmbeddingSet emb = read_embeddings(input);
  cluster::PseudoLabelConfig cfg;
  cfg.n_clusters = n_clusters;
  cfg.kmeans_k = kmeans_k == 0 ? 3 * n_clusters : kmeans_k;
  cfg.kmeans_iters = kmeans_iters;
  cfg.kmeans_restarts = restarts;
  cfg.seed = common.seed;
  LabelSet labels = cluster::generate_pseudo_labels(emb, cfg);
  write_labels(labels, output);
  std::cout << "wrote " << labels.ids.size() << " pseudo-labels ("
            << (labels.max_label() + 1) << " clusters)\n";
  return 0;
}

int run_score(const std::string& emb_path, const std::string& trials_path,
              const std::string& output) {
  EmbeddingSet emb = read_embeddings(emb_path);
  TrialList trials = read_trials(trials_path);
  ScoreSet scores = scoring::score_trials(emb, trials);
  write_scores(scores, output);
  std::cout << "scored " << scores.scores.size() << " trials\n";
  return 0;
}

int run_norm(const std::string& scores_path, const std::string& emb_path,
             const std::string& cohort_path, const std::string& method,
             std::size_t cohort_size, std::size_t drop_top, std::size_t use_top,
             const CommonArgs& common, const std::string& output) {
  ScoreSet raw = read_scores(scores_path);
  EmbeddingSet emb = read_embeddings(emb_path);
  EmbeddingSet cohort = read_embeddings(cohort_path);
  if (cohort_size > 0 && cohort_size < cohort.size())
    cohort = scoring::cohort_select(cohort, cohort_size, common.seed);
  scoring::NormConfig cfg;
  cfg.method = method == "s" ? scoring::NormMethod::kS
                             : scoring::NormMethod::kZt;
  cfg.adaptive.drop_top = drop_top;
  cfg.adaptive.use_top = use_top;
  ScoreSet normed = scoring::normalize_scores(raw, emb, cohort, cfg);
  std::vector<std::string> comments = {
      "method=" + method,
      "cohort_size=" + std::to_string(cohort.size()),
      "drop_top=" + std::to_string(drop_top),
      "use_top=" + std::to_string(use_top),
      "seed=" + std::to_string(common.seed)};
  write_scores(normed, output, comments);
  std::cout << "normalized " << normed.scores.size() << " trials ("
            << method << "-norm, cohort " << cohort.size() << ")\n";
  return 0;
}

int run_fuse(const std::vector<std::string>& inputs,
             const std::string& output) {
  std::vector<ScoreSet> sets;
  sets.reserve(inputs.size());
  for (const auto& p : inputs) sets.push_back(read_scores(p));
  ScoreSet fused = scoring::fuse(sets);
  write_scores(fused, output);
  std::cout << "fused " << sets.size() << " systems over "
            << fused.scores.size() << " trials\n";
  return 0;
}

int run_eval(const std::string& scores_path, const std::string& trials_path,
             double p_target, const std::string& det_out) {
  ScoreSet scores = read_scores(scores_path);
  TrialList trials = read_trials(trials_path);
  if (!trials.labels)
    throw_error(ErrorCode::kUnknownLabel, "trial list has no labels");
  if (trials.pairs != scores.trials.pairs)
    throw_error(ErrorCode::kDimMismatch,
                "scores and trial list disagree on the trial pairs");
  scores.trials.labels = trials.labels;

  metrics::DcfConfig dc;
  dc.p_target = p_target;
  double e = metrics::eer(scores);
  double d = metrics::min_dcf(scores, dc);
  std::printf("EER %.4f minDCF %.4f\n", 100.0 * e, d);

  if (!det_out.empty()) {
    std::ofstream f(det_out, std::ios::binary | std::ios::trunc);
    if (!f) throw_error(ErrorCode::kIoFailure, "cannot write " + det_out);
    f << "threshold\tp_miss\tp_fa\n";
    for (const auto& pt : metrics::det_points(scores))
      f << format_full(pt.threshold) << "\t" << format_full(pt.p_miss) << "\t"
        << format_full(pt.p_fa) << "\n";
  }
  return 0;
}

int run_pipeline_cmd(const std::string& config_path, const CommonArgs& common,
                     const std::string& out_dir) {
  pipeline::PipelineConfig cfg = load_config(config_path, common);
  pipeline::PipelineOutcome outcome = pipeline::run_pipeline(cfg);
  if (!out_dir.empty()) pipeline::write_outcome(outcome, out_dir);
  std::cout << outcome.report_text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised speaker verification backend"};
  app.require_subcommand(1);

  CommonArgs common;

  std::string config_path;
  std::string out_dir = "out";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", config_path, "Experiment config file");
  synth->add_option("--out", out_dir, "Output directory");
  add_seed(synth, &common);

  std::string extractor_path, input_path, output_path;
  auto* embed = app.add_subcommand("embed", "Apply a saved extractor");
  embed->add_option("--extractor", extractor_path, "Extractor checkpoint")
      ->required();
  embed->add_option("--input", input_path, "Input feature container")
      ->required();
  embed->add_option("--output", output_path, "Output embedding container")
      ->required();
  add_seed(embed, &common);

  std::size_t n_clusters = 75, kmeans_k = 0;
  int kmeans_iters = 100, restarts = 3;
  auto* clu = app.add_subcommand("cluster", "Assign pseudo-speaker labels");
  clu->add_option("--input", input_path, "Embedding container")->required();
  clu->add_option("--output", output_path, "Label TSV")->required();
  clu->add_option("--n-clusters", n_clusters, "Pseudo-speaker count");
  clu->add_option("--kmeans-k", kmeans_k,
                  "Over-clustering size (0 means 3 * n-clusters)");
  clu->add_option("--kmeans-iters", kmeans_iters, "Lloyd iteration cap");
  clu->add_option("--restarts", restarts, "k-means restarts");
  add_seed(clu, &common);

  std::string trials_path, scores_path;
  auto* score = app.add_subcommand("score", "Cosine-score a trial list");
  score->add_option("--embeddings", input_path, "Embedding container")
      ->required();
  score->add_option("--trials", trials_path, "Trial list TSV")->required();
  score->add_option("--output", output_path, "Score TSV")->required();
  add_seed(score, &common);

  std::string method = "zt", cohort_path;
  std::size_t cohort_size = 0, drop_top = 10, use_top = 200;
  auto* norm = app.add_subcommand("norm", "Adaptively normalize scores");
  norm->add_option("--method", method, "Normalization method")
      ->check(CLI::IsMember({"zt", "s"}));
  norm->add_option("--scores", scores_path, "Raw score TSV")->required();
  norm->add_option("--embeddings", input_path, "Trial-side embeddings")
      ->required();
  norm->add_option("--cohort", cohort_path, "Cohort embeddings")->required();
  norm->add_option("--cohort-size", cohort_size,
                   "Random cohort subset size (0 keeps all)");
  norm->add_option("--drop-top", drop_top, "Top cohort scores to discard");
  norm->add_option("--use-top", use_top, "Cohort scores kept after the drop");
  norm->add_option("--output", output_path, "Normalized score TSV")
      ->required();
  add_seed(norm, &common);

  std::vector<std::string> fuse_inputs;
  auto* fuse = app.add_subcommand("fuse", "Average score sets over a trial list");
  fuse->add_option("--input", fuse_inputs, "Score TSV (repeat per system)")
      ->required()
      ->expected(-2);
  fuse->add_option("--output", output_path, "Fused score TSV")->required();
  add_seed(fuse, &common);

  double p_target = 0.05;
  std::string det_out;
  auto* ev = app.add_subcommand("eval", "Report EER and minimum DCF");
  ev->add_option("--scores", scores_path, "Score TSV")->required();
  ev->add_option("--trials", trials_path, "Labeled trial list TSV")
      ->required();
  ev->add_option("--p-target", p_target, "Target prior for the DCF");
  ev->add_option("--det-out", det_out, "Write the error tradeoff sweep here");
  add_seed(ev, &common);

  auto* pipe = app.add_subcommand("pipeline", "Run the full experiment");
  pipe->add_option("--config", config_path, "Experiment config file");
  pipe->add_option("--out", out_dir, "Output directory (empty skips files)");
  add_seed(pipe, &common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth(config_path, common, out_dir);
    if (embed->parsed())
      return run_embed(extractor_path, input_path, output_path);
    if (clu->parsed())
      return run_cluster(input_path, output_path, n_clusters, kmeans_k,
                         kmeans_iters, restarts, common);
    if (score->parsed())
      return run_score(input_path, trials_path, output_path);
    if (norm->parsed())
      return run_norm(scores_path, input_path, cohort_path, method,
                      cohort_size, drop_top, use_top, common, output_path);
    if (fuse->parsed()) return run_fuse(fuse_inputs, output_path);
    if (ev->parsed())
      return run_eval(scores_path, trials_path, p_target, det_out);
    if (pipe->parsed()) return run_pipeline_cmd(config_path, common, out_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

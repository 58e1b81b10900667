// sslsv/test_cli.cc

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "sslsv/io.h"
#include "sslsv/types.h"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "sslsv_cli_test";

// Runs the CLI with stdout and stderr captured to a file; returns the
// process exit code.
int run_cli(const std::string& args, const std::string& log_name = "log") {
  fs::create_directories(kWork);
  fs::path log = kWork / (log_name + ".txt");
  std::string cmd = std::string(SSLSV_CLI_PATH) + " " + args + " > " +
                    log.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string small_config() {
  return "n_speakers = 10\n"
         "utts_per_speaker = 6\n"
         "feature_dim = 12\n"
         "val_speakers = 6\n"
         "val_utts_per_speaker = 5\n"
         "n_trials = 200\n";
}

}  // namespace

TEST_CASE("synth, score and eval chain into a working flow") {
  fs::create_directories(kWork);
  fs::path conf = kWork / "small.conf";
  {
    std::ofstream out(conf);
    out << small_config();
  }
  fs::path data = kWork / "data";
  REQUIRE(run_cli("synth --config " + conf.string() + " --seed 5 --out " +
                  data.string()) == 0);
  CHECK(fs::exists(data / "train_clean.bin"));
  CHECK(fs::exists(data / "train_baked.bin"));
  CHECK(fs::exists(data / "val.bin"));
  CHECK(fs::exists(data / "trials.tsv"));
  CHECK(fs::exists(data / "train_speakers.tsv"));

  fs::path scores = kWork / "scores.tsv";
  REQUIRE(run_cli("score --embeddings " + (data / "val.bin").string() +
                  " --trials " + (data / "trials.tsv").string() +
                  " --output " + scores.string()) == 0);

  REQUIRE(run_cli("eval --scores " + scores.string() + " --trials " +
                      (data / "trials.tsv").string(),
                  "eval") == 0);
  std::string eval_out = read_text(kWork / "eval.txt");
  CHECK(eval_out.find("EER") != std::string::npos);
  CHECK(eval_out.find("minDCF") != std::string::npos);
}

TEST_CASE("synth output is identical for the same seed") {
  fs::create_directories(kWork);
  fs::path conf = kWork / "same.conf";
  {
    std::ofstream out(conf);
    out << small_config();
  }
  fs::path d1 = kWork / "d1";
  fs::path d2 = kWork / "d2";
  REQUIRE(run_cli("synth --config " + conf.string() + " --seed 9 --out " +
                  d1.string()) == 0);
  REQUIRE(run_cli("synth --config " + conf.string() + " --seed 9 --out " +
                  d2.string()) == 0);
  CHECK(read_text(d1 / "val.bin") == read_text(d2 / "val.bin"));
  CHECK(read_text(d1 / "trials.tsv") == read_text(d2 / "trials.tsv"));

  fs::path d3 = kWork / "d3";
  REQUIRE(run_cli("synth --config " + conf.string() + " --seed 10 --out " +
                  d3.string()) == 0);
  CHECK(read_text(d1 / "val.bin") != read_text(d3 / "val.bin"));
}

TEST_CASE("normalization and fusion commands round out the flow") {
  fs::create_directories(kWork);
  fs::path conf = kWork / "norm.conf";
  {
    std::ofstream out(conf);
    out << small_config();
  }
  fs::path data = kWork / "norm_data";
  REQUIRE(run_cli("synth --config " + conf.string() + " --seed 21 --out " +
                  data.string()) == 0);
  fs::path scores = kWork / "norm_scores.tsv";
  REQUIRE(run_cli("score --embeddings " + (data / "val.bin").string() +
                  " --trials " + (data / "trials.tsv").string() +
                  " --output " + scores.string()) == 0);

  // The training embeddings act as the cohort.
  fs::path zt = kWork / "zt.tsv";
  REQUIRE(run_cli("norm --method zt --scores " + scores.string() +
                  " --embeddings " + (data / "val.bin").string() +
                  " --cohort " + (data / "train_baked.bin").string() +
                  " --drop-top 3 --use-top 40 --output " + zt.string()) == 0);
  fs::path sn = kWork / "sn.tsv";
  REQUIRE(run_cli("norm --method s --scores " + scores.string() +
                  " --embeddings " + (data / "val.bin").string() +
                  " --cohort " + (data / "train_baked.bin").string() +
                  " --drop-top 3 --use-top 40 --output " + sn.string()) == 0);
  CHECK(read_text(zt) != read_text(sn));

  fs::path fused = kWork / "fused.tsv";
  REQUIRE(run_cli("fuse --input " + zt.string() + " --input " + sn.string() +
                  " --output " + fused.string()) == 0);
  sslsv::ScoreSet f = sslsv::read_scores(fused.string());
  sslsv::ScoreSet z = sslsv::read_scores(zt.string());
  CHECK(f.size() == z.size());

  REQUIRE(run_cli("eval --scores " + fused.string() + " --trials " +
                      (data / "trials.tsv").string(),
                  "eval_fused") == 0);
}

TEST_CASE("usage problems exit with code one") {
  CHECK(run_cli("") == 1);                       // no subcommand
  CHECK(run_cli("frobnicate") == 1);             // unknown subcommand
  CHECK(run_cli("score --embeddings x.bin") == 1);  // missing required
  CHECK(run_cli("norm --method q --scores a --embeddings b --cohort c "
                "--output d") == 1);             // bad enum value
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("data problems exit with code two") {
  fs::create_directories(kWork);
  CHECK(run_cli("score --embeddings /nonexistent.bin --trials t.tsv "
                "--output o.tsv") == 2);

  fs::path bad = kWork / "bad.conf";
  {
    std::ofstream out(bad);
    out << "no_such_key = 1\n";
  }
  CHECK(run_cli("pipeline --config " + bad.string()) == 2);

  fs::path garbage = kWork / "garbage.bin";
  {
    std::ofstream out(garbage, std::ios::binary);
    out << "not an embedding container";
  }
  fs::path trials = kWork / "missing_trials.tsv";
  {
    std::ofstream out(trials);
    out << "a\tb\ttarget\n";
  }
  CHECK(run_cli("score --embeddings " + garbage.string() + " --trials " +
                trials.string() + " --output " + (kWork / "o.tsv").string()) ==
        2);
}

TEST_CASE("cluster command labels a small embedding file") {
  fs::create_directories(kWork);
  fs::path conf = kWork / "clu.conf";
  {
    std::ofstream out(conf);
    out << small_config();
  }
  fs::path data = kWork / "clu_data";
  REQUIRE(run_cli("synth --config " + conf.string() + " --seed 31 --out " +
                  data.string()) == 0);
  fs::path labels = kWork / "clu_labels.tsv";
  REQUIRE(run_cli("cluster --input " + (data / "train_baked.bin").string() +
                  " --output " + labels.string() +
                  " --n-clusters 10 --kmeans-k 20 --seed 3") == 0);
  sslsv::LabelSet ls = sslsv::read_labels(labels.string());
  CHECK(ls.size() == 60);
  CHECK(ls.max_label() <= 9);
}

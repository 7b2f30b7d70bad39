// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "speechtext/corpus.hpp"
#include "speechtext/decode.hpp"

using namespace speechtext;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& name) const {
    return (path / name).string();
  }
};

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "speechtext");
  return cli::run(args);
}

// One shared tiny corpus + artifacts for the pipeline tests.
struct Pipeline {
  TempDir dir{"speechtext_cli_test"};

  Pipeline() {
    REQUIRE(run({"synth", "--out-dir", dir.sub("corpus"), "--seed", "5",
                 "--set", "synth.utterances=8", "--set", "synth.heldout=3",
                 "--set", "synth.text_lines=16", "--set", "synth.phonemes=6",
                 "--set", "synth.words=10"}) == 0);
    REQUIRE(run({"labels", "--manifest", dir.sub("corpus/manifest.tsv"),
                 "--out", dir.sub("corpus/labels.tsv"), "--seed", "5",
                 "--set", "labeler.classes=8"}) == 0);
    REQUIRE(run({"duration-model", "--alignments",
                 dir.sub("corpus/alignments.tsv"), "--lexicon",
                 dir.sub("corpus/lexicon.txt"), "--out",
                 dir.sub("corpus/durations.tsv")}) == 0);
  }

  std::vector<std::string> pretrain_args(const std::string& out,
                                         std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {
        "pretrain", "--manifest", dir.sub("corpus/manifest.tsv"),
        "--labels", dir.sub("corpus/labels.tsv"),
        "--text", dir.sub("corpus/text_corpus.txt"),
        "--lexicon", dir.sub("corpus/lexicon.txt"),
        "--durations", dir.sub("corpus/durations.tsv"),
        "--alignments", dir.sub("corpus/alignments.tsv"),
        "--out-dir", dir.sub(out), "--seed", "3",
        "--set", "train.steps=8", "--set", "train.warmup_steps=2",
        "--set", "train.ctc_start_step=4", "--set", "model.codewords=8"};
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
  }
};

}  // namespace

TEST_CASE("cli pipeline end to end") {
  Pipeline p;

  SUBCASE("synth is idempotent for one seed") {
    REQUIRE(run({"synth", "--out-dir", p.dir.sub("again"), "--seed", "5",
                 "--set", "synth.utterances=8", "--set", "synth.heldout=3",
                 "--set", "synth.text_lines=16", "--set", "synth.phonemes=6",
                 "--set", "synth.words=10"}) == 0);
    CHECK(read_bytes(p.dir.sub("again/manifest.tsv")) ==
          read_bytes(p.dir.sub("corpus/manifest.tsv")));
    CHECK(read_bytes(p.dir.sub("again/alignments.tsv")) ==
          read_bytes(p.dir.sub("corpus/alignments.tsv")));
  }

  SUBCASE("labels are idempotent for one seed") {
    REQUIRE(run({"labels", "--manifest", p.dir.sub("corpus/manifest.tsv"),
                 "--out", p.dir.sub("labels2.tsv"), "--seed", "5",
                 "--set", "labeler.classes=8"}) == 0);
    CHECK(read_bytes(p.dir.sub("labels2.tsv")) ==
          read_bytes(p.dir.sub("corpus/labels.tsv")));
  }

  SUBCASE("upsample writes one row per usable line") {
    REQUIRE(run({"upsample", "--text", p.dir.sub("corpus/text_corpus.txt"),
                 "--lexicon", p.dir.sub("corpus/lexicon.txt"), "--durations",
                 p.dir.sub("corpus/durations.tsv"), "--out",
                 p.dir.sub("upsampled.txt"), "--seed", "5"}) == 0);
    std::ifstream in(p.dir.sub("upsampled.txt"));
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 16);
  }

  SUBCASE("pretrain, relabel, finetune, decode, score, diagnose") {
    REQUIRE(run(p.pretrain_args("run")) == 0);
    CHECK(fs::exists(p.dir.sub("run/checkpoint.ckpt")));
    CHECK(fs::exists(p.dir.sub("run/train.log")));

    // Deterministic: the same seed reproduces the checkpoint bytes.
    REQUIRE(run(p.pretrain_args("run_b")) == 0);
    CHECK(read_bytes(p.dir.sub("run_b/checkpoint.ckpt")) ==
          read_bytes(p.dir.sub("run/checkpoint.ckpt")));

    REQUIRE(run({"relabel", "--checkpoint", p.dir.sub("run/checkpoint.ckpt"),
                 "--manifest", p.dir.sub("corpus/manifest.tsv"), "--out",
                 p.dir.sub("labels_iter2.tsv"), "--seed", "3", "--set",
                 "labeler.relabel_classes=6"}) == 0);
    LabelMap relabeled = load_labels(p.dir.sub("labels_iter2.tsv"));
    Manifest manifest = Manifest::load(p.dir.sub("corpus/manifest.tsv"));
    REQUIRE(relabeled.size() == manifest.items.size());
    for (const Utterance& utt : manifest.items) {
      CHECK(relabeled.at(utt.id).size() == utt.frames);
    }

    REQUIRE(run({"finetune", "--checkpoint", p.dir.sub("run/checkpoint.ckpt"),
                 "--manifest", p.dir.sub("corpus/manifest.tsv"), "--out-dir",
                 p.dir.sub("run"), "--seed", "3", "--set",
                 "finetune.steps=4"}) == 0);
    CHECK(fs::exists(p.dir.sub("run/finetuned.ckpt")));

    REQUIRE(run({"decode", "--checkpoint", p.dir.sub("run/finetuned.ckpt"),
                 "--manifest", p.dir.sub("corpus/manifest_heldout.tsv"),
                 "--out", p.dir.sub("hyp.tsv"), "--set", "decode.beam=4",
                 "--lm-corpus", p.dir.sub("corpus/text_corpus.txt"),
                 "--lm-out", p.dir.sub("lm.txt"),
                 "--set", "decode.w1=0.2", "--set", "decode.lm_order=2"}) == 0);
    std::ifstream hyp(p.dir.sub("hyp.tsv"));
    std::size_t lines = 0;
    std::string line;
    while (std::getline(hyp, line)) {
      CHECK(line.find('\t') != std::string::npos);
      ++lines;
    }
    CHECK(lines == 3);  // one per held-out utterance
    CHECK(fs::exists(p.dir.sub("lm.txt")));
    NGramLM lm = NGramLM::load(p.dir.sub("lm.txt"));
    CHECK(lm.order() == 2);

    REQUIRE(run({"score", "--hyp", p.dir.sub("hyp.tsv"), "--manifest",
                 p.dir.sub("corpus/manifest_heldout.tsv")}) == 0);

    REQUIRE(run({"diagnose", "--checkpoint", p.dir.sub("run/checkpoint.ckpt"),
                 "--manifest", p.dir.sub("corpus/manifest.tsv"),
                 "--alignments", p.dir.sub("corpus/alignments.tsv"),
                 "--out-dir", p.dir.sub("diag")}) == 0);
    CHECK(fs::exists(p.dir.sub("diag/heatmap_layer3.csv")));
    CHECK(fs::exists(p.dir.sub("diag/heatmap_layer3.pgm")));
    CHECK(fs::exists(p.dir.sub("diag/projection_layer3.csv")));
  }
}

TEST_CASE("cli rejects unknown configuration keys") {
  TempDir dir("speechtext_cli_badkey");
  CHECK(run({"synth", "--out-dir", dir.sub("x"), "--set",
             "synth.utterancez=4"}) != 0);
}

TEST_CASE("cli gradcheck exits zero") {
  CHECK(run({"gradcheck"}) == 0);
}

TEST_CASE("cli rejects missing subcommand") {
  CHECK(run({}) != 0);
}

// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "speechtext/common.hpp"
#include "speechtext/corpus.hpp"
#include "speechtext/labeler.hpp"

using namespace speechtext;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("feature files round trip bit exactly") {
  TempDir dir("speechtext_feat_test");
  Rng rng(1);
  Tensor features = Tensor::randn({7, 5}, rng);
  std::string path = (dir.path / "x.bin").string();
  save_features(path, features);
  Tensor loaded = load_features(path);
  CHECK(loaded.shape() == features.shape());
  CHECK(loaded.data() == features.data());
}

TEST_CASE("manifest round trips and resolves relative paths") {
  TempDir dir("speechtext_manifest_test");
  Manifest manifest;
  manifest.items.push_back({"a", "features/a.bin", 12, "HELLO WORLD"});
  manifest.items.push_back({"b", "features/b.bin", 4, ""});
  std::string path = (dir.path / "manifest.tsv").string();
  manifest.save(path);
  Manifest loaded = Manifest::load(path);
  REQUIRE(loaded.items.size() == 2);
  CHECK(loaded.items[0].transcript == "HELLO WORLD");
  CHECK(loaded.items[1].frames == 4);
  CHECK(loaded.resolve(loaded.items[0]) ==
        (dir.path / "features/a.bin").string());
  CHECK(loaded.by_id("b").id == "b");
  CHECK_THROWS_AS(loaded.by_id("missing"), Error);
}

TEST_CASE("label files round trip") {
  TempDir dir("speechtext_label_test");
  LabelMap labels;
  labels["utt1"] = {0, 1, 2, 2, 1};
  labels["utt2"] = {3};
  std::string path = (dir.path / "labels.tsv").string();
  save_labels(path, labels);
  CHECK(load_labels(path) == labels);
}

TEST_CASE("wav files round trip within quantization error") {
  TempDir dir("speechtext_wav_test");
  Rng rng(2);
  std::vector<double> samples(1600);
  for (double& s : samples) s = rng.uniform(-0.9, 0.9);
  std::string path = (dir.path / "x.wav").string();
  save_wav(path, samples, 16000);
  WavData wav = load_wav(path);
  CHECK(wav.sample_rate == 16000.0);
  REQUIRE(wav.samples.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(std::abs(wav.samples[i] - samples[i]) < 1.0 / 32000.0);
  }
}

TEST_CASE("character vocabulary") {
  std::vector<std::string> transcripts = {"AB BA", "CAB"};
  CharVocab vocab = CharVocab::build(transcripts);
  CHECK(vocab.size() == 5);  // blank + space + A B C
  std::vector<int> ids = vocab.encode("AB BA");
  CHECK(vocab.decode(ids) == "AB BA");
  CHECK_THROWS_AS(vocab.encode("XYZ"), Error);
  CHECK_THROWS_AS(CharVocab::from_chars({"A"}), Error);  // blank missing
}

TEST_CASE("synthetic corpus with zero noise repeats prototypes exactly") {
  TempDir dir("speechtext_synth_test");
  SyntheticCorpusSpec spec;
  spec.noise = 0.0;
  spec.utterance_count = 4;
  spec.heldout_count = 1;
  spec.text_line_count = 5;
  Rng rng(7);
  SyntheticCorpus corpus = make_synthetic(spec, dir.str(), rng);

  for (const Utterance& utt : corpus.train.items) {
    Tensor features = load_features(corpus.train.resolve(utt));
    const Alignment& alignment = corpus.alignments.at(utt.id);
    CHECK(alignment.frames() == features.rows());
    for (const AlignmentSpan& span : alignment.spans) {
      for (std::size_t t = span.start; t < span.end; ++t) {
        for (std::size_t d = 0; d < spec.feature_dim; ++d) {
          CHECK(features.at(t, d) ==
                corpus.prototypes.at(static_cast<std::size_t>(span.phoneme), d));
        }
      }
    }
  }
}

TEST_CASE("synthetic corpus is byte identical for one seed") {
  TempDir dir_a("speechtext_synth_a");
  TempDir dir_b("speechtext_synth_b");
  SyntheticCorpusSpec spec;
  spec.utterance_count = 3;
  spec.heldout_count = 1;
  spec.text_line_count = 4;
  Rng rng_a(11), rng_b(11);
  SyntheticCorpus a = make_synthetic(spec, dir_a.str(), rng_a);
  SyntheticCorpus b = make_synthetic(spec, dir_b.str(), rng_b);
  save_synthetic(a, dir_a.str());
  save_synthetic(b, dir_b.str());

  CHECK(read_bytes((dir_a.path / "manifest.tsv").string()) ==
        read_bytes((dir_b.path / "manifest.tsv").string()));
  CHECK(read_bytes((dir_a.path / "lexicon.txt").string()) ==
        read_bytes((dir_b.path / "lexicon.txt").string()));
  CHECK(read_bytes((dir_a.path / "alignments.tsv").string()) ==
        read_bytes((dir_b.path / "alignments.tsv").string()));
  CHECK(read_bytes((dir_a.path / "text_corpus.txt").string()) ==
        read_bytes((dir_b.path / "text_corpus.txt").string()));
  for (const Utterance& utt : a.train.items) {
    CHECK(read_bytes(a.train.resolve(utt)) ==
          read_bytes(b.train.resolve(b.train.by_id(utt.id))));
  }
}

TEST_CASE("zero-noise corpus clusters back onto the phoneme partition") {
  TempDir dir("speechtext_synth_kmeans");
  SyntheticCorpusSpec spec;
  spec.noise = 0.0;
  spec.utterance_count = 6;
  spec.heldout_count = 1;
  Rng rng(13);
  SyntheticCorpus corpus = make_synthetic(spec, dir.str(), rng);

  // One class per phoneme actually observed in the sampled utterances.
  std::set<int> observed;
  for (const Utterance& utt : corpus.train.items) {
    for (int p : frame_phonemes(corpus.alignments.at(utt.id))) observed.insert(p);
  }
  std::size_t classes = observed.size();
  Rng km_rng(5);
  LabelMap labels = label_manifest(corpus.train, classes, 20, km_rng);

  // Each ground-truth phoneme must map to exactly one cluster id and no
  // cluster id may serve two phonemes.
  std::map<int, int> phoneme_to_cluster;
  std::map<int, int> cluster_to_phoneme;
  for (const Utterance& utt : corpus.train.items) {
    const Alignment& alignment = corpus.alignments.at(utt.id);
    const std::vector<int>& z = labels.at(utt.id);
    REQUIRE(z.size() == alignment.frames());
    std::vector<int> truth = frame_phonemes(alignment);
    for (std::size_t t = 0; t < z.size(); ++t) {
      auto [it, fresh] = phoneme_to_cluster.try_emplace(truth[t], z[t]);
      CHECK(it->second == z[t]);
      auto [jt, fresh2] = cluster_to_phoneme.try_emplace(z[t], truth[t]);
      CHECK(jt->second == truth[t]);
    }
  }
}

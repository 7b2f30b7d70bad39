// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "speechtext/paired.hpp"
#include "speechtext/tensor.hpp"
#include "speechtext/textpipe.hpp"

namespace speechtext {

class Rng;

struct Utterance {
  std::string id;
  std::string feature_path;  // relative to the manifest directory
  std::size_t frames = 0;
  std::string transcript;    // optional
};

// Manifest file: `utt_id<TAB>feature_path<TAB>frames[<TAB>transcript]`.
struct Manifest {
  std::vector<Utterance> items;
  std::string base_dir;  // set by load(); used to resolve feature paths

  static Manifest load(const std::string& path);
  void save(const std::string& path) const;

  const Utterance& by_id(const std::string& id) const;
  std::string resolve(const Utterance& utterance) const;
  std::size_t total_frames() const;
};

// Feature file: 8-byte magic, u32 version, u64 frames, u64 dim, row-major
// doubles, little endian.
Tensor load_features(const std::string& path);
void save_features(const std::string& path, const Tensor& features);

// Label file: `utt_id<TAB>z1 z2 z3 ...`.
using LabelMap = std::map<std::string, std::vector<int>>;
LabelMap load_labels(const std::string& path);
void save_labels(const std::string& path, const LabelMap& labels);

std::vector<std::string> load_text_lines(const std::string& path);
void save_text_lines(const std::string& path,
                     std::span<const std::string> lines);

// Mono PCM16 RIFF/WAVE.
struct WavData {
  std::vector<double> samples;
  double sample_rate = 0.0;
};
WavData load_wav(const std::string& path);
void save_wav(const std::string& path, std::span<const double> samples,
              std::size_t sample_rate);

// Character vocabulary for the CTC head. Index 0 is the blank; characters
// are sorted. The space between words is a regular character.
class CharVocab {
 public:
  static CharVocab build(std::span<const std::string> transcripts);
  static CharVocab from_chars(std::vector<std::string> chars);

  std::size_t size() const { return chars_.size(); }  // includes blank
  const std::vector<std::string>& chars() const { return chars_; }
  std::vector<int> encode(const std::string& text) const;
  std::string decode(std::span<const int> ids) const;
  bool has(char ch) const;

 private:
  std::vector<std::string> chars_;  // [0] = blank sentinel
  std::map<char, int> ids_;
};

// Synthetic desk-scale corpus: each phoneme owns a distinct prototype
// feature vector; frames are the prototype plus optional noise, so
// alignments are exact by construction.
struct SyntheticCorpusSpec {
  std::size_t phoneme_count = 14;  // letters, excluding SIL
  std::size_t word_count = 16;
  std::size_t utterance_count = 20;
  std::size_t heldout_count = 12;
  std::size_t text_line_count = 60;
  std::size_t feature_dim = 8;
  std::size_t min_duration = 3;
  std::size_t max_duration = 6;
  std::size_t words_min = 2;
  std::size_t words_max = 3;
  std::size_t sil_min = 2;
  std::size_t sil_max = 3;
  double sil_word_prob = 1.0;
  double noise = 0.05;

  void validate() const;
};

class Config;
SyntheticCorpusSpec synth_spec_from(const Config& config);

struct SyntheticCorpus {
  Lexicon lexicon;
  Manifest train;
  Manifest heldout;
  std::map<std::string, Alignment> alignments;  // train and heldout
  std::vector<std::string> text_lines;
  Tensor prototypes;  // [inventory, feature_dim], SIL row 0
};

// Writes feature files under `out_dir`/features and returns the corpus
// structures; manifests get base_dir = out_dir. Same seed, same bytes.
SyntheticCorpus make_synthetic(const SyntheticCorpusSpec& spec,
                               const std::string& out_dir, Rng& rng);

// Convenience: write manifest/lexicon/alignment/text files alongside the
// features.
void save_synthetic(const SyntheticCorpus& corpus, const std::string& out_dir);

}  // namespace speechtext

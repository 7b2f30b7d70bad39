// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "speechtext/common.hpp"

namespace speechtext {

class Rng;

// Raised when a word has no pronunciation and the policy is to skip the
// utterance.
class OovError : public Error {
 public:
  using Error::Error;
};

// Pronunciation lexicon. Phoneme ids are stable: the reserved SIL token is
// always id 0, the remaining inventory is sorted. SIL never appears inside
// an entry.
class Lexicon {
 public:
  static constexpr const char* kSilToken = "SIL";
  static constexpr int kSilId = 0;

  static Lexicon from_entries(
      const std::map<std::string, std::vector<std::string>>& entries);
  // File format: one `WORD<TAB>PH1 PH2 ...` line per word.
  static Lexicon load(const std::string& path);
  void save(const std::string& path) const;

  const std::vector<std::string>& inventory() const { return inventory_; }
  int token_id(const std::string& token) const;
  const std::string& token(int id) const;
  bool has_word(const std::string& word) const;
  const std::vector<int>& pronunciation(const std::string& word) const;
  std::size_t word_count() const { return words_.size(); }
  std::vector<std::string> words() const;

 private:
  std::vector<std::string> inventory_;
  std::map<std::string, int> token_ids_;
  std::map<std::string, std::vector<int>> words_;
};

enum class OovPolicy { kSkipUtterance, kSpellOut };

// Uppercases, turns characters outside [A-Z0-9'] into separators, splits on
// whitespace.
std::vector<std::string> normalize_words(const std::string& text);

struct PhonemizedText {
  std::vector<int> phonemes;
  // Index of the last phoneme of each word, ascending; one entry per word.
  std::vector<std::size_t> word_ends;
};

PhonemizedText phonemize(const std::string& text, const Lexicon& lexicon,
                         OovPolicy policy = OovPolicy::kSkipUtterance);

struct SilInsertedText {
  std::vector<int> tokens;  // starts and ends with SIL
  // Index (into tokens) of the last phoneme of each word.
  std::vector<std::size_t> word_end_tokens;
};

// SIL always goes at both sentence ends; each interior word boundary gets a
// SIL independently with probability `rate`.
SilInsertedText insert_sil(const PhonemizedText& text, double rate, Rng& rng);

// Per-phoneme repetition-length distribution, truncated at the cumulative
// probability cutoff and renormalized. A phoneme that was never observed
// falls back to the pooled all-phoneme distribution.
class DurationModel {
 public:
  struct Entry {
    // (length, probability), lengths ascending, probabilities summing to 1.
    std::vector<std::pair<std::size_t, double>> lengths;
  };

  // `frame_labels` holds one frame-level phoneme id sequence per utterance.
  static DurationModel estimate(
      const std::vector<std::vector<int>>& frame_labels, double cutoff = 0.98);

  // File format: `PHONEME<TAB>length:prob,length:prob,...`, rows in phoneme
  // id order. The inventory supplies names.
  void save(const std::string& path,
            const std::vector<std::string>& inventory) const;
  static DurationModel load(const std::string& path, const Lexicon& lexicon);

  bool has(int phoneme) const { return entries_.count(phoneme) > 0; }
  // Pooled fallback when the phoneme was never observed.
  const Entry& entry(int phoneme) const;
  std::size_t sample(int phoneme, Rng& rng) const;
  double probability(int phoneme, std::size_t length) const;
  std::size_t max_retained_length() const;
  const std::map<int, Entry>& entries() const { return entries_; }

 private:
  std::map<int, Entry> entries_;
  Entry pooled_;
};

struct UpsampledText {
  std::vector<int> frames;  // frame-level phoneme ids
  // Per source token: [start, end) frame span, in order, contiguous.
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::vector<int> source;                // the SIL-inserted token sequence
  std::vector<std::size_t> word_end_frames;  // last frame of each word
};

UpsampledText upsample(const SilInsertedText& text, const DurationModel& model,
                       Rng& rng);

// Collapse consecutive duplicates of a frame sequence.
std::vector<int> collapse_runs(std::span<const int> frames);

}  // namespace speechtext

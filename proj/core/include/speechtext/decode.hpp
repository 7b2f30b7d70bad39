// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "speechtext/tensor.hpp"

namespace speechtext {

// Shallow fusion decode parameters: hypothesis score is
//   ctc_logp + lm_weight * lm_logp + length_bonus * |y|.
struct DecodeConfig {
  std::size_t beam = 16;
  double lm_weight = 0.0;    // w1
  double length_bonus = 0.0; // w2
  std::size_t lm_order = 4;

  void validate() const;
};

// Argmax per frame, collapse repeats, drop blanks (blank id 0).
std::vector<int> greedy_decode(const Tensor& logits);

// Character-level n-gram model with add-k smoothing within a seen context
// and a constant backoff weight when the context itself is unseen. Under a
// seen context the conditional distribution sums to exactly 1; backoff can
// only shed mass, so sums never exceed 1.
class NGramLM {
 public:
  NGramLM() = default;

  static NGramLM train(const std::vector<std::vector<int>>& corpus,
                       std::size_t order, std::size_t vocab, double add_k = 0.1,
                       double backoff = 0.4);

  // log p(symbol | history); only the trailing order-1 symbols matter.
  double logp(int symbol, std::span<const int> history) const;
  double sequence_logp(std::span<const int> sequence) const;
  // Per-symbol perplexity of a corpus.
  double perplexity(const std::vector<std::vector<int>>& corpus) const;

  std::size_t order() const { return order_; }
  std::size_t vocab() const { return vocab_; }

  // Text table keyed by `context|symbol`, one row per stored log
  // probability; `*` rows carry the shared probability of each unseen
  // symbol under that context. Symbols are vocabulary ids.
  void save(const std::string& path) const;
  static NGramLM load(const std::string& path);

 private:
  struct Context {
    std::map<int, double> logp;  // seen symbols
    double unk_logp = 0.0;       // each unseen symbol
  };

  const Context* find_context(std::span<const int> context) const;

  std::size_t order_ = 1;
  std::size_t vocab_ = 0;
  double add_k_ = 0.1;
  double backoff_ = 0.4;
  std::map<std::vector<int>, Context> contexts_;
};

struct Hypothesis {
  std::vector<int> symbols;
  double score = 0.0;
  double ctc_logp = 0.0;
  double lm_logp = 0.0;
};

// CTC prefix beam search over per-frame log probabilities [T, V] with blank
// at 0, with optional shallow fusion. Ties in score resolve to the
// lexicographically smallest symbol sequence. With lm_weight and
// length_bonus zero and a beam wide enough to keep every live prefix, the
// result is the exact most probable label sequence.
Hypothesis beam_decode(const Tensor& log_probs, const NGramLM* lm,
                       const DecodeConfig& config);

std::vector<std::string> split_words(const std::string& text);

// Word-level edit distance divided by reference length. Reference must be
// non-empty.
double wer(std::span<const std::string> hyp,
           std::span<const std::string> ref);
double wer(const std::string& hyp, const std::string& ref);

}  // namespace speechtext

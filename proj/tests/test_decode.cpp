// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "speechtext/common.hpp"
#include "speechtext/decode.hpp"

using namespace speechtext;

namespace {

Tensor log_of(const Tensor& probs) {
  Tensor out(probs.shape());
  for (std::size_t k = 0; k < probs.numel(); ++k) {
    out.at(k) = std::log(probs.at(k));
  }
  return out;
}

// Total probability that a random path through `probs` collapses to `y`,
// summed over every one of the vocab^T paths. Independent of the beam
// search implementation.
double collapse_probability(const Tensor& probs, const std::vector<int>& y) {
  std::size_t frames = probs.rows(), vocab = probs.cols();
  double total = 0.0;
  std::vector<int> path(frames, 0);
  while (true) {
    double p = 1.0;
    for (std::size_t t = 0; t < frames; ++t) p *= probs.at(t, path[t]);
    std::vector<int> collapsed;
    int prev = -1;
    for (int s : path) {
      if (s != 0 && s != prev) collapsed.push_back(s);
      prev = s;
    }
    if (collapsed == y) total += p;
    std::size_t pos = 0;
    while (pos < frames && ++path[pos] == static_cast<int>(vocab)) {
      path[pos] = 0;
      ++pos;
    }
    if (pos == frames) break;
  }
  return total;
}

// Exhaustive best label sequence; ties go to the lexicographically
// smallest.
std::vector<int> exhaustive_best(const Tensor& probs) {
  std::size_t frames = probs.rows(), vocab = probs.cols();
  std::vector<int> best;
  double best_p = collapse_probability(probs, {});
  std::vector<std::vector<int>> frontier = {{}};
  for (std::size_t len = 1; len <= frames; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& seq : frontier) {
      for (std::size_t v = 1; v < vocab; ++v) {
        std::vector<int> candidate = seq;
        candidate.push_back(static_cast<int>(v));
        double p = collapse_probability(probs, candidate);
        if (p > best_p || (p == best_p && candidate < best)) {
          best_p = p;
          best = candidate;
        }
        next.push_back(std::move(candidate));
      }
    }
    frontier = std::move(next);
  }
  return best;
}

Tensor random_prob_rows(std::size_t frames, std::size_t vocab, Rng& rng) {
  Tensor probs({frames, vocab});
  for (std::size_t t = 0; t < frames; ++t) {
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      probs.at(t, v) = 0.05 + rng.uniform();
      z += probs.at(t, v);
    }
    for (std::size_t v = 0; v < vocab; ++v) probs.at(t, v) /= z;
  }
  return probs;
}

}  // namespace

TEST_CASE("greedy decode collapses repeats and drops blanks") {
  // Frames argmax: a a blank b  ->  "ab"
  Tensor logits = Tensor::matrix(4, 3,
                                 {0, 5, 0,
                                  0, 5, 0,
                                  5, 0, 0,
                                  0, 0, 5});
  CHECK(greedy_decode(logits) == std::vector<int>{1, 2});

  Tensor blanks = Tensor::matrix(3, 3, {5, 0, 0, 5, 0, 0, 5, 0, 0});
  CHECK(greedy_decode(blanks).empty());

  // a blank a -> "aa": the blank separates the repeat.
  Tensor repeat = Tensor::matrix(3, 2, {0, 5, 5, 0, 0, 5});
  CHECK(greedy_decode(repeat) == std::vector<int>{1, 1});
}

TEST_CASE("ngram on a single-character corpus") {
  NGramLM lm = NGramLM::train({{0, 0, 0, 0}}, 1, 2, 0.1);
  // p(a) = (4 + 0.1) / (4 + 0.2)
  CHECK(std::exp(lm.logp(0, {})) == doctest::Approx(4.1 / 4.2).epsilon(1e-12));
  // Unseen character still gets smoothed mass.
  CHECK(std::exp(lm.logp(1, {})) == doctest::Approx(0.1 / 4.2).epsilon(1e-12));
}

TEST_CASE("training perplexity beats the uniform model") {
  Rng rng(3);
  std::vector<std::vector<int>> corpus;
  for (int i = 0; i < 50; ++i) {
    std::vector<int> seq;
    for (int j = 0; j < 20; ++j) {
      // Skewed distribution over 4 symbols.
      double u = rng.uniform();
      seq.push_back(u < 0.6 ? 0 : u < 0.85 ? 1 : u < 0.97 ? 2 : 3);
    }
    corpus.push_back(std::move(seq));
  }
  NGramLM lm = NGramLM::train(corpus, 3, 4);
  CHECK(lm.perplexity(corpus) < 4.0);  // uniform perplexity over 4 symbols
}

TEST_CASE("conditional distributions never sum above one") {
  std::vector<std::vector<int>> corpus = {{0, 1, 2, 0, 1}, {2, 2, 1, 0}};
  NGramLM lm = NGramLM::train(corpus, 3, 3);
  // Enumerate every context up to order-1 over the vocab, including unseen.
  std::vector<std::vector<int>> contexts = {{}};
  for (int a = 0; a < 3; ++a) {
    contexts.push_back({a});
    for (int b = 0; b < 3; ++b) contexts.push_back({a, b});
  }
  for (const auto& ctx : contexts) {
    double total = 0.0;
    for (int sym = 0; sym < 3; ++sym) {
      total += std::exp(lm.logp(sym, ctx));
    }
    CHECK(total <= 1.0 + 1e-6);
  }
}

TEST_CASE("ngram file round trips") {
  NGramLM lm = NGramLM::train({{0, 1, 0, 1, 2}}, 2, 3);
  std::string path = "test_lm.tmp";
  lm.save(path);
  NGramLM loaded = NGramLM::load(path);
  std::vector<int> history = {0, 1};
  for (int sym = 0; sym < 3; ++sym) {
    CHECK(lm.logp(sym, history) ==
          doctest::Approx(loaded.logp(sym, history)).epsilon(1e-12));
  }
  std::remove(path.c_str());
}

TEST_CASE("wide beam with zero weights equals exhaustive prefix search") {
  Rng rng(2026);
  DecodeConfig cfg;
  cfg.beam = 64;  // more than every live prefix for T <= 4, vocab 3
  for (std::size_t frames = 1; frames <= 4; ++frames) {
    for (int trial = 0; trial < 40; ++trial) {
      Tensor probs = random_prob_rows(frames, 3, rng);
      Hypothesis hyp = beam_decode(log_of(probs), nullptr, cfg);
      std::vector<int> oracle = exhaustive_best(probs);
      INFO("frames ", frames, " trial ", trial);
      CHECK(hyp.symbols == oracle);
      CHECK(std::exp(hyp.ctc_logp) ==
            doctest::Approx(collapse_probability(probs, oracle)).epsilon(1e-9));
    }
  }
}

TEST_CASE("length bonus flips the ranking on a crafted instance") {
  // p("a") ~ 0.4975 beats p("ab") ~ 0.405 without a bonus; a strong length
  // bonus reverses it.
  Tensor probs = Tensor::matrix(2, 3,
                                {0.05, 0.90, 0.05,
                                 0.50, 0.05, 0.45});
  DecodeConfig plain;
  plain.beam = 64;
  Hypothesis flat = beam_decode(log_of(probs), nullptr, plain);
  CHECK(flat.symbols == std::vector<int>{1});

  DecodeConfig bonused = plain;
  bonused.length_bonus = 0.5;
  Hypothesis longer = beam_decode(log_of(probs), nullptr, bonused);
  CHECK(longer.symbols == std::vector<int>{1, 2});

  // Score arithmetic: ctc + w1 * lm + w2 * |y| exactly.
  CHECK(longer.score ==
        doctest::Approx(longer.ctc_logp + 0.5 * 2.0).epsilon(1e-12));
  double p_ab = collapse_probability(probs, {1, 2});
  CHECK(longer.ctc_logp == doctest::Approx(std::log(p_ab)).epsilon(1e-12));
}

TEST_CASE("lm weight enters the score") {
  Tensor probs = Tensor::matrix(2, 3,
                                {0.10, 0.60, 0.30,
                                 0.60, 0.20, 0.20});
  NGramLM lm = NGramLM::train({{1, 2, 1, 2, 1}}, 2, 3);
  DecodeConfig cfg;
  cfg.beam = 64;
  cfg.lm_weight = 0.7;
  Hypothesis hyp = beam_decode(log_of(probs), &lm, cfg);
  std::vector<int> seq = hyp.symbols;
  double lm_logp = lm.sequence_logp(seq);
  CHECK(hyp.lm_logp == doctest::Approx(lm_logp).epsilon(1e-12));
  CHECK(hyp.score ==
        doctest::Approx(hyp.ctc_logp + 0.7 * lm_logp).epsilon(1e-12));
}

TEST_CASE("beam of one follows the greedy path when prefixes never merge") {
  Tensor probs = Tensor::matrix(3, 3,
                                {0.01, 0.98, 0.01,
                                 0.98, 0.01, 0.01,
                                 0.01, 0.01, 0.98});
  DecodeConfig cfg;
  cfg.beam = 1;
  Hypothesis hyp = beam_decode(log_of(probs), nullptr, cfg);
  CHECK(hyp.symbols == greedy_decode(log_of(probs)));
}

TEST_CASE("wer basics") {
  CHECK(wer("the cat sat down", "the cat sat down") == 0.0);
  CHECK(wer("the dog sat down", "the cat sat down") ==
        doctest::Approx(0.25));
  CHECK(wer("", "one two three") == doctest::Approx(1.0));
  CHECK_THROWS_AS(wer("anything", ""), Error);
}

TEST_CASE("wer is symmetric in substitutions") {
  CHECK(wer("a b c d", "a x c d") == wer("a x c d", "a b c d"));
}

TEST_CASE("wer is subadditive over aligned segment concatenation") {
  Rng rng(7);
  std::vector<std::string> vocab = {"aa", "bb", "cc", "dd"};
  for (int trial = 0; trial < 50; ++trial) {
    auto random_sentence = [&](std::size_t n) {
      std::string out;
      for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += vocab[rng.uniform_index(vocab.size())];
      }
      return out;
    };
    std::size_t m1 = 1 + rng.uniform_index(4), m2 = 1 + rng.uniform_index(4);
    std::string r1 = random_sentence(m1), r2 = random_sentence(m2);
    std::string h1 = random_sentence(rng.uniform_index(5));
    std::string h2 = random_sentence(rng.uniform_index(5));
    std::string hc = h1.empty() ? h2 : (h2.empty() ? h1 : h1 + " " + h2);
    double joint = wer(hc, r1 + " " + r2) * static_cast<double>(m1 + m2);
    double parts = wer(h1, r1) * static_cast<double>(m1) +
                   wer(h2, r2) * static_cast<double>(m2);
    CHECK(joint <= parts + 1e-9);
  }
}

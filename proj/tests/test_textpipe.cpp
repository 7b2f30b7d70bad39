// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <map>

#include "speechtext/common.hpp"
#include "speechtext/textpipe.hpp"

using namespace speechtext;

namespace {

Lexicon tiny_lexicon() {
  return Lexicon::from_entries({
      {"A", {"AH"}},
      {"THE", {"DH", "AH"}},
      {"CAT", {"K", "AE", "T"}},
  });
}

}  // namespace

TEST_CASE("single word phonemizes to its lexicon entry") {
  Lexicon lex = tiny_lexicon();
  PhonemizedText out = phonemize("A", lex);
  REQUIRE(out.phonemes.size() == 1);
  CHECK(lex.token(out.phonemes[0]) == "AH");
  CHECK(out.word_ends == std::vector<std::size_t>{0});
}

TEST_CASE("multi word phonemization concatenates and records boundaries") {
  Lexicon lex = tiny_lexicon();
  PhonemizedText out = phonemize("the cat.", lex);  // normalizer uppercases
  std::vector<std::string> tokens;
  for (int id : out.phonemes) tokens.push_back(lex.token(id));
  CHECK(tokens == std::vector<std::string>{"DH", "AH", "K", "AE", "T"});
  CHECK(out.word_ends == std::vector<std::size_t>{1, 4});
}

TEST_CASE("empty text is rejected") {
  Lexicon lex = tiny_lexicon();
  CHECK_THROWS_AS(phonemize("", lex), Error);
  CHECK_THROWS_AS(phonemize("  .,!  ", lex), Error);
}

TEST_CASE("oov policy") {
  Lexicon lex = tiny_lexicon();
  SUBCASE("skip policy throws a structured error") {
    CHECK_THROWS_AS(phonemize("DOG", lex), OovError);
  }
  SUBCASE("spell-out falls back to per-letter entries") {
    Lexicon spell = Lexicon::from_entries({
        {"A", {"AH"}},
        {"B", {"BH"}},
    });
    PhonemizedText out = phonemize("AB BA", spell, OovPolicy::kSpellOut);
    std::vector<std::string> tokens;
    for (int id : out.phonemes) tokens.push_back(spell.token(id));
    CHECK(tokens == std::vector<std::string>{"AH", "BH", "BH", "AH"});
  }
}

TEST_CASE("SIL is excluded from lexicon entries and owns id 0") {
  Lexicon lex = tiny_lexicon();
  CHECK(lex.token(Lexicon::kSilId) == "SIL");
  CHECK_THROWS_AS(Lexicon::from_entries({{"BAD", {"SIL"}}}), Error);
}

TEST_CASE("insert_sil at rate zero pads only the ends") {
  Lexicon lex = tiny_lexicon();
  Rng rng(1);
  PhonemizedText text = phonemize("THE CAT", lex);
  SilInsertedText out = insert_sil(text, 0.0, rng);
  REQUIRE(out.tokens.size() == 7);
  CHECK(out.tokens.front() == Lexicon::kSilId);
  CHECK(out.tokens.back() == Lexicon::kSilId);
  for (std::size_t i = 1; i + 1 < out.tokens.size(); ++i) {
    CHECK(out.tokens[i] != Lexicon::kSilId);
  }
}

TEST_CASE("insert_sil at rate one fills every interior boundary") {
  Lexicon lex = tiny_lexicon();
  Rng rng(1);
  SilInsertedText out = insert_sil(phonemize("THE CAT", lex), 1.0, rng);
  std::vector<std::string> tokens;
  for (int id : out.tokens) tokens.push_back(lex.token(id));
  CHECK(tokens == std::vector<std::string>{"SIL", "DH", "AH", "SIL", "K", "AE",
                                           "T", "SIL"});
}

TEST_CASE("interior SIL frequency matches the rate") {
  Lexicon lex = tiny_lexicon();
  Rng rng(99);
  PhonemizedText text = phonemize("THE CAT", lex);  // one interior boundary
  const int trials = 100000;
  int hits = 0;
  for (int i = 0; i < trials; ++i) {
    SilInsertedText out = insert_sil(text, 0.25, rng);
    if (out.tokens.size() == 8) ++hits;
  }
  double frequency = static_cast<double>(hits) / trials;
  CHECK(std::abs(frequency - 0.25) < 0.005);
}

namespace {

// Frame-label sequences realizing exact run-length counts for one phoneme.
std::vector<std::vector<int>> runs_for(
    int phoneme, const std::map<std::size_t, std::size_t>& counts) {
  std::vector<std::vector<int>> out;
  for (const auto& [len, count] : counts) {
    for (std::size_t i = 0; i < count; ++i) {
      out.emplace_back(len, phoneme);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("duration truncation keeps the bucket that reaches the cutoff") {
  auto alignments = runs_for(5, {{1, 50}, {2, 30}, {3, 15}, {4, 4}, {5, 1}});
  DurationModel model = DurationModel::estimate(alignments, 0.98);
  const auto& entry = model.entry(5);
  REQUIRE(entry.lengths.size() == 4);
  CHECK(entry.lengths[0].first == 1);
  CHECK(entry.lengths[0].second == doctest::Approx(50.0 / 99.0).epsilon(1e-9));
  CHECK(entry.lengths[1].second == doctest::Approx(30.0 / 99.0).epsilon(1e-9));
  CHECK(entry.lengths[2].second == doctest::Approx(15.0 / 99.0).epsilon(1e-9));
  CHECK(entry.lengths[3].second == doctest::Approx(4.0 / 99.0).epsilon(1e-9));
}

TEST_CASE("single observed length concentrates all mass") {
  DurationModel model = DurationModel::estimate(runs_for(2, {{3, 100}}));
  const auto& entry = model.entry(2);
  REQUIRE(entry.lengths.size() == 1);
  CHECK(entry.lengths[0].first == 3);
  CHECK(entry.lengths[0].second == doctest::Approx(1.0));
}

TEST_CASE("cutoff one keeps the distribution unchanged") {
  auto alignments = runs_for(1, {{1, 50}, {2, 30}, {3, 15}, {4, 4}, {5, 1}});
  DurationModel model = DurationModel::estimate(alignments, 1.0);
  const auto& entry = model.entry(1);
  REQUIRE(entry.lengths.size() == 5);
  CHECK(entry.lengths[4].second == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("duration model invariants") {
  Rng rng(4);
  std::vector<std::vector<int>> alignments;
  for (int u = 0; u < 40; ++u) {
    std::vector<int> seq;
    for (int s = 0; s < 12; ++s) {
      int phoneme = static_cast<int>(rng.uniform_index(4));
      std::size_t run = 1 + rng.uniform_index(6);
      seq.insert(seq.end(), run, phoneme);
    }
    alignments.push_back(std::move(seq));
  }
  DurationModel model = DurationModel::estimate(alignments, 0.98);
  for (const auto& [phoneme, entry] : model.entries()) {
    double total = 0.0;
    std::size_t previous = 0;
    for (const auto& [len, p] : entry.lengths) {
      CHECK(len >= 1);
      CHECK(len > previous);  // ascending retained support
      previous = len;
      total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("unseen phoneme falls back to the pooled distribution") {
  DurationModel model = DurationModel::estimate(runs_for(1, {{2, 10}}));
  CHECK(!model.has(7));
  CHECK(model.entry(7).lengths == model.entry(1).lengths);
}

TEST_CASE("upsample with deterministic durations") {
  Lexicon lex = tiny_lexicon();
  Rng rng(5);
  SilInsertedText text = insert_sil(phonemize("THE CAT", lex), 0.0, rng);

  SUBCASE("all mass on one reproduces the input") {
    DurationModel model = DurationModel::estimate({{0, 1, 2, 3}}, 1.0);
    UpsampledText out = upsample(text, model, rng);
    CHECK(out.frames == text.tokens);
  }
  SUBCASE("all mass on two doubles every token") {
    DurationModel model = DurationModel::estimate({{0, 0, 1, 1, 2, 2}}, 1.0);
    UpsampledText out = upsample(text, model, rng);
    REQUIRE(out.frames.size() == 2 * text.tokens.size());
    for (std::size_t i = 0; i < text.tokens.size(); ++i) {
      CHECK(out.frames[2 * i] == text.tokens[i]);
      CHECK(out.frames[2 * i + 1] == text.tokens[i]);
    }
  }
}

TEST_CASE("spans reconstruct the frame sequence and runs collapse back") {
  Lexicon lex = tiny_lexicon();
  Rng rng(17);
  auto alignments = runs_for(0, {{1, 5}, {2, 5}, {3, 2}});
  // Give every token the same pooled distribution.
  DurationModel model = DurationModel::estimate(alignments, 1.0);
  SilInsertedText text = insert_sil(phonemize("THE CAT", lex), 1.0, rng);
  for (int trial = 0; trial < 25; ++trial) {
    UpsampledText out = upsample(text, model, rng);
    REQUIRE(out.spans.size() == text.tokens.size());
    std::size_t cursor = 0;
    bool adjacent_equal = false;
    for (std::size_t i = 0; i < out.spans.size(); ++i) {
      auto [start, end] = out.spans[i];
      CHECK(start == cursor);
      CHECK(end > start);
      for (std::size_t f = start; f < end; ++f) {
        CHECK(out.frames[f] == text.tokens[i]);
      }
      cursor = end;
      if (i > 0 && text.tokens[i] == text.tokens[i - 1]) adjacent_equal = true;
    }
    CHECK(cursor == out.frames.size());
    if (!adjacent_equal) {
      CHECK(collapse_runs(out.frames) == text.tokens);
    }
  }
}

TEST_CASE("upsampled length distribution matches the model") {
  auto alignments = runs_for(3, {{1, 60}, {2, 25}, {3, 10}, {4, 5}});
  DurationModel model = DurationModel::estimate(alignments, 1.0);
  Rng rng(31);
  std::map<std::size_t, std::size_t> observed;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) observed[model.sample(3, rng)] += 1;
  double tv = 0.0;
  for (std::size_t len = 1; len <= 4; ++len) {
    double empirical = static_cast<double>(observed[len]) / draws;
    tv += std::abs(empirical - model.probability(3, len));
  }
  tv /= 2.0;
  CHECK(tv < 0.02);
}

TEST_CASE("lexicon and duration model files round trip") {
  Lexicon lex = tiny_lexicon();
  std::string lex_path = "test_lexicon.tmp";
  lex.save(lex_path);
  Lexicon loaded = Lexicon::load(lex_path);
  CHECK(loaded.inventory() == lex.inventory());
  CHECK(loaded.pronunciation("CAT") == lex.pronunciation("CAT"));

  auto alignments = runs_for(1, {{1, 50}, {2, 30}, {3, 15}, {4, 4}, {5, 1}});
  DurationModel model = DurationModel::estimate(alignments, 0.98);
  std::string dm_path = "test_durations.tmp";
  model.save(dm_path, lex.inventory());
  DurationModel reloaded = DurationModel::load(dm_path, lex);
  const auto& a = model.entry(1);
  const auto& b = reloaded.entry(1);
  REQUIRE(a.lengths.size() == b.lengths.size());
  for (std::size_t i = 0; i < a.lengths.size(); ++i) {
    CHECK(a.lengths[i].first == b.lengths[i].first);
    CHECK(a.lengths[i].second == doctest::Approx(b.lengths[i].second).epsilon(1e-12));
  }
  std::remove(lex_path.c_str());
  std::remove(dm_path.c_str());
}

// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/textpipe.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace speechtext {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(line);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

std::string format_probability(double p) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), p);
  return std::string(buf, res.ptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// Lexicon
// ---------------------------------------------------------------------------

Lexicon Lexicon::from_entries(
    const std::map<std::string, std::vector<std::string>>& entries) {
  Lexicon lex;
  std::set<std::string> tokens;
  for (const auto& [word, phones] : entries) {
    if (word.empty() || phones.empty()) {
      throw Error("Lexicon: empty word or pronunciation");
    }
    for (const auto& p : phones) {
      if (p == kSilToken) {
        throw Error("Lexicon: SIL appears inside the entry for '" + word + "'");
      }
      tokens.insert(p);
    }
  }
  lex.inventory_.push_back(kSilToken);
  for (const auto& t : tokens) lex.inventory_.push_back(t);
  for (std::size_t i = 0; i < lex.inventory_.size(); ++i) {
    lex.token_ids_[lex.inventory_[i]] = static_cast<int>(i);
  }
  for (const auto& [word, phones] : entries) {
    std::vector<int> ids;
    ids.reserve(phones.size());
    for (const auto& p : phones) ids.push_back(lex.token_ids_.at(p));
    lex.words_[word] = std::move(ids);
  }
  return lex;
}

Lexicon Lexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("Lexicon: cannot open " + path);
  std::map<std::string, std::vector<std::string>> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto parts = split(line, '\t');
    if (parts.size() != 2) {
      throw IoError("Lexicon: " + path + ":" + std::to_string(lineno) +
                    ": expected WORD<TAB>PHONEMES");
    }
    entries[parts[0]] = split_ws(parts[1]);
  }
  if (entries.empty()) throw IoError("Lexicon: " + path + " has no entries");
  return from_entries(entries);
}

void Lexicon::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("Lexicon: cannot write " + path);
  for (const auto& [word, ids] : words_) {
    out << word << '\t';
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out << ' ';
      out << inventory_[ids[i]];
    }
    out << '\n';
  }
}

int Lexicon::token_id(const std::string& token) const {
  auto it = token_ids_.find(token);
  if (it == token_ids_.end()) {
    throw Error("Lexicon: unknown phoneme '" + token + "'");
  }
  return it->second;
}

const std::string& Lexicon::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= inventory_.size()) {
    throw Error("Lexicon: phoneme id " + std::to_string(id) + " out of range");
  }
  return inventory_[id];
}

bool Lexicon::has_word(const std::string& word) const {
  return words_.count(word) > 0;
}

const std::vector<int>& Lexicon::pronunciation(const std::string& word) const {
  auto it = words_.find(word);
  if (it == words_.end()) throw OovError("Lexicon: no pronunciation for '" + word + "'");
  return it->second;
}

std::vector<std::string> Lexicon::words() const {
  std::vector<std::string> out;
  out.reserve(words_.size());
  for (const auto& [word, ids] : words_) out.push_back(word);
  return out;
}

// ---------------------------------------------------------------------------
// Phonemization
// ---------------------------------------------------------------------------

std::vector<std::string> normalize_words(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    unsigned char u = static_cast<unsigned char>(ch);
    char up = static_cast<char>(std::toupper(u));
    if ((up >= 'A' && up <= 'Z') || (up >= '0' && up <= '9') || up == '\'') {
      cleaned.push_back(up);
    } else {
      cleaned.push_back(' ');
    }
  }
  return split_ws(cleaned);
}

PhonemizedText phonemize(const std::string& text, const Lexicon& lexicon,
                         OovPolicy policy) {
  std::vector<std::string> words = normalize_words(text);
  if (words.empty()) {
    throw Error("phonemize: text is empty after normalization");
  }
  PhonemizedText out;
  for (const auto& word : words) {
    std::vector<int> phones;
    if (lexicon.has_word(word)) {
      phones = lexicon.pronunciation(word);
    } else if (policy == OovPolicy::kSpellOut) {
      for (char ch : word) {
        std::string letter(1, ch);
        if (!lexicon.has_word(letter)) {
          throw OovError("phonemize: cannot spell out '" + word +
                         "', letter '" + letter + "' has no pronunciation");
        }
        const auto& p = lexicon.pronunciation(letter);
        phones.insert(phones.end(), p.begin(), p.end());
      }
    } else {
      throw OovError("phonemize: out-of-vocabulary word '" + word + "'");
    }
    out.phonemes.insert(out.phonemes.end(), phones.begin(), phones.end());
    out.word_ends.push_back(out.phonemes.size() - 1);
  }
  return out;
}

SilInsertedText insert_sil(const PhonemizedText& text, double rate, Rng& rng) {
  if (rate < 0.0 || rate > 1.0) {
    throw ConfigError("insert_sil: rate must lie in [0, 1]");
  }
  if (text.phonemes.empty()) throw Error("insert_sil: empty phoneme sequence");
  SilInsertedText out;
  out.tokens.push_back(Lexicon::kSilId);
  std::size_t word = 0;
  for (std::size_t i = 0; i < text.phonemes.size(); ++i) {
    out.tokens.push_back(text.phonemes[i]);
    if (word < text.word_ends.size() && text.word_ends[word] == i) {
      out.word_end_tokens.push_back(out.tokens.size() - 1);
      bool last_word = word + 1 == text.word_ends.size();
      if (!last_word && rng.bernoulli(rate)) {
        out.tokens.push_back(Lexicon::kSilId);
      }
      ++word;
    }
  }
  out.tokens.push_back(Lexicon::kSilId);
  return out;
}

// ---------------------------------------------------------------------------
// Duration model
// ---------------------------------------------------------------------------

namespace {

DurationModel::Entry truncate_histogram(
    const std::map<std::size_t, std::size_t>& counts, double cutoff) {
  std::size_t total = 0;
  for (const auto& [len, c] : counts) total += c;
  DurationModel::Entry entry;
  double cumulative = 0.0;
  for (const auto& [len, c] : counts) {
    double p = static_cast<double>(c) / static_cast<double>(total);
    entry.lengths.emplace_back(len, p);
    cumulative += p;
    // Retain the bucket at which the cumulative probability first reaches
    // the cutoff; everything strictly longer is the removed tail.
    if (cumulative + 1e-12 >= cutoff) break;
  }
  double kept = 0.0;
  for (const auto& [len, p] : entry.lengths) kept += p;
  for (auto& [len, p] : entry.lengths) p /= kept;
  return entry;
}

}  // namespace

DurationModel DurationModel::estimate(
    const std::vector<std::vector<int>>& frame_labels, double cutoff) {
  if (frame_labels.empty()) {
    throw Error("DurationModel: no alignments to estimate from");
  }
  if (cutoff <= 0.0 || cutoff > 1.0) {
    throw ConfigError("DurationModel: cutoff must lie in (0, 1]");
  }
  std::map<int, std::map<std::size_t, std::size_t>> histograms;
  std::map<std::size_t, std::size_t> pooled;
  for (const auto& seq : frame_labels) {
    std::size_t i = 0;
    while (i < seq.size()) {
      std::size_t j = i;
      while (j < seq.size() && seq[j] == seq[i]) ++j;
      std::size_t run = j - i;
      histograms[seq[i]][run] += 1;
      pooled[run] += 1;
      i = j;
    }
  }
  if (pooled.empty()) {
    throw Error("DurationModel: alignments contain no frames");
  }
  DurationModel model;
  for (const auto& [phoneme, counts] : histograms) {
    model.entries_[phoneme] = truncate_histogram(counts, cutoff);
  }
  model.pooled_ = truncate_histogram(pooled, cutoff);
  return model;
}

const DurationModel::Entry& DurationModel::entry(int phoneme) const {
  auto it = entries_.find(phoneme);
  if (it != entries_.end()) return it->second;
  return pooled_;
}

std::size_t DurationModel::sample(int phoneme, Rng& rng) const {
  const Entry& e = entry(phoneme);
  if (e.lengths.empty()) throw Error("DurationModel: empty distribution");
  double draw = rng.uniform();
  double cumulative = 0.0;
  for (const auto& [len, p] : e.lengths) {
    cumulative += p;
    if (draw < cumulative) return len;
  }
  return e.lengths.back().first;
}

double DurationModel::probability(int phoneme, std::size_t length) const {
  for (const auto& [len, p] : entry(phoneme).lengths) {
    if (len == length) return p;
  }
  return 0.0;
}

std::size_t DurationModel::max_retained_length() const {
  std::size_t m = 0;
  for (const auto& [phoneme, e] : entries_) {
    for (const auto& [len, p] : e.lengths) m = std::max(m, len);
  }
  for (const auto& [len, p] : pooled_.lengths) m = std::max(m, len);
  return m;
}

void DurationModel::save(const std::string& path,
                         const std::vector<std::string>& inventory) const {
  std::ofstream out(path);
  if (!out) throw IoError("DurationModel: cannot write " + path);
  for (const auto& [phoneme, e] : entries_) {
    if (phoneme < 0 || static_cast<std::size_t>(phoneme) >= inventory.size()) {
      throw Error("DurationModel: phoneme id outside inventory");
    }
    out << inventory[phoneme] << '\t';
    for (std::size_t i = 0; i < e.lengths.size(); ++i) {
      if (i) out << ',';
      out << e.lengths[i].first << ':' << format_probability(e.lengths[i].second);
    }
    out << '\n';
  }
}

DurationModel DurationModel::load(const std::string& path,
                                  const Lexicon& lexicon) {
  std::ifstream in(path);
  if (!in) throw IoError("DurationModel: cannot open " + path);
  DurationModel model;
  std::map<std::size_t, double> pooled_mass;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto parts = split(line, '\t');
    if (parts.size() != 2) {
      throw IoError("DurationModel: " + path + ":" + std::to_string(lineno) +
                    ": expected PHONEME<TAB>length:prob,...");
    }
    Entry entry;
    for (const auto& piece : split(parts[1], ',')) {
      auto colon = piece.find(':');
      if (colon == std::string::npos) {
        throw IoError("DurationModel: " + path + ":" + std::to_string(lineno) +
                      ": malformed pair '" + piece + "'");
      }
      std::size_t len = std::stoul(piece.substr(0, colon));
      double p = std::stod(piece.substr(colon + 1));
      if (len < 1) {
        throw IoError("DurationModel: " + path + ":" + std::to_string(lineno) +
                      ": lengths must be at least 1");
      }
      entry.lengths.emplace_back(len, p);
      pooled_mass[len] += p;
    }
    model.entries_[lexicon.token_id(parts[0])] = std::move(entry);
  }
  if (model.entries_.empty()) {
    throw IoError("DurationModel: " + path + " has no rows");
  }
  double total = 0.0;
  for (const auto& [len, p] : pooled_mass) total += p;
  for (const auto& [len, p] : pooled_mass) {
    model.pooled_.lengths.emplace_back(len, p / total);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Up-sampling
// ---------------------------------------------------------------------------

UpsampledText upsample(const SilInsertedText& text, const DurationModel& model,
                       Rng& rng) {
  UpsampledText out;
  out.source = text.tokens;
  for (int token : text.tokens) {
    std::size_t run = model.sample(token, rng);
    std::size_t start = out.frames.size();
    out.frames.insert(out.frames.end(), run, token);
    out.spans.emplace_back(start, start + run);
  }
  for (std::size_t token_index : text.word_end_tokens) {
    out.word_end_frames.push_back(out.spans[token_index].second - 1);
  }
  return out;
}

std::vector<int> collapse_runs(std::span<const int> frames) {
  std::vector<int> out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (out.empty() || frames[i] != out.back()) out.push_back(frames[i]);
  }
  return out;
}

}  // namespace speechtext

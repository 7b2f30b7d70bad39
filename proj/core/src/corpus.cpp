// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "speechtext/common.hpp"
#include "speechtext/config.hpp"

namespace speechtext {

namespace {

constexpr char kFeatureMagic[8] = {'S', 'P', 'T', 'X', 'F', 'E', 'A', 'T'};

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("unexpected end of file in " + path);
  return value;
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Manifest Manifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("Manifest: cannot open " + path);
  Manifest manifest;
  manifest.base_dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> parts;
    std::string item;
    std::istringstream row(line);
    while (std::getline(row, item, '\t')) parts.push_back(item);
    if (parts.size() < 3) {
      throw IoError("Manifest: " + path + ":" + std::to_string(lineno) +
                    ": expected utt_id<TAB>feature_path<TAB>frames[<TAB>transcript]");
    }
    Utterance utt;
    utt.id = parts[0];
    utt.feature_path = parts[1];
    utt.frames = std::stoul(parts[2]);
    if (parts.size() > 3) utt.transcript = parts[3];
    manifest.items.push_back(std::move(utt));
  }
  return manifest;
}

void Manifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("Manifest: cannot write " + path);
  for (const Utterance& utt : items) {
    out << utt.id << '\t' << utt.feature_path << '\t' << utt.frames;
    if (!utt.transcript.empty()) out << '\t' << utt.transcript;
    out << '\n';
  }
}

const Utterance& Manifest::by_id(const std::string& id) const {
  for (const Utterance& utt : items) {
    if (utt.id == id) return utt;
  }
  throw Error("Manifest: no utterance '" + id + "'");
}

std::string Manifest::resolve(const Utterance& utterance) const {
  std::filesystem::path p(utterance.feature_path);
  if (p.is_absolute() || base_dir.empty()) return utterance.feature_path;
  return (std::filesystem::path(base_dir) / p).string();
}

std::size_t Manifest::total_frames() const {
  std::size_t total = 0;
  for (const Utterance& utt : items) total += utt.frames;
  return total;
}

// ---------------------------------------------------------------------------
// Feature and label files
// ---------------------------------------------------------------------------

Tensor load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_features: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kFeatureMagic, 8) != 0) {
    throw IoError("load_features: " + path + " is not a feature file");
  }
  auto version = read_raw<std::uint32_t>(in, path);
  if (version != 1) {
    throw IoError("load_features: unsupported version in " + path);
  }
  auto frames = read_raw<std::uint64_t>(in, path);
  auto dim = read_raw<std::uint64_t>(in, path);
  Tensor features({static_cast<std::size_t>(frames), static_cast<std::size_t>(dim)});
  in.read(reinterpret_cast<char*>(features.data().data()),
          static_cast<std::streamsize>(frames * dim * sizeof(double)));
  if (!in) throw IoError("load_features: truncated data in " + path);
  return features;
}

void save_features(const std::string& path, const Tensor& features) {
  if (features.ndim() != 2) {
    throw ShapeError("save_features: features must be [T, dim]");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_features: cannot write " + path);
  out.write(kFeatureMagic, 8);
  write_raw<std::uint32_t>(out, 1);
  write_raw<std::uint64_t>(out, features.rows());
  write_raw<std::uint64_t>(out, features.cols());
  out.write(reinterpret_cast<const char*>(features.data().data()),
            static_cast<std::streamsize>(features.numel() * sizeof(double)));
}

LabelMap load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_labels: cannot open " + path);
  LabelMap labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IoError("load_labels: malformed line in " + path);
    }
    std::istringstream ids(line.substr(tab + 1));
    std::vector<int>& seq = labels[line.substr(0, tab)];
    int z;
    while (ids >> z) seq.push_back(z);
  }
  return labels;
}

void save_labels(const std::string& path, const LabelMap& labels) {
  std::ofstream out(path);
  if (!out) throw IoError("save_labels: cannot write " + path);
  for (const auto& [utt, seq] : labels) {
    out << utt << '\t';
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out << ' ';
      out << seq[i];
    }
    out << '\n';
  }
}

std::vector<std::string> load_text_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_text_lines: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void save_text_lines(const std::string& path,
                     std::span<const std::string> lines) {
  std::ofstream out(path);
  if (!out) throw IoError("save_text_lines: cannot write " + path);
  for (const std::string& line : lines) out << line << '\n';
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

WavData load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_wav: cannot open " + path);
  char riff[4], wave[4];
  in.read(riff, 4);
  in.seekg(4, std::ios::cur);  // chunk size
  in.read(wave, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 ||
      std::memcmp(wave, "WAVE", 4) != 0) {
    throw IoError("load_wav: " + path + " is not a RIFF/WAVE file");
  }
  WavData wav;
  std::uint16_t channels = 0, bits = 0;
  bool have_fmt = false;
  while (in) {
    char id[4];
    in.read(id, 4);
    if (!in) break;
    auto size = read_raw<std::uint32_t>(in, path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      auto format = read_raw<std::uint16_t>(in, path);
      channels = read_raw<std::uint16_t>(in, path);
      wav.sample_rate = static_cast<double>(read_raw<std::uint32_t>(in, path));
      in.seekg(6, std::ios::cur);  // byte rate + block align
      bits = read_raw<std::uint16_t>(in, path);
      if (format != 1 || bits != 16) {
        throw IoError("load_wav: only 16-bit PCM is supported: " + path);
      }
      in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw IoError("load_wav: data before fmt in " + path);
      std::size_t count = size / 2;
      std::vector<std::int16_t> raw(count);
      in.read(reinterpret_cast<char*>(raw.data()),
              static_cast<std::streamsize>(size));
      if (!in) throw IoError("load_wav: truncated data in " + path);
      std::size_t frames = channels ? count / channels : 0;
      wav.samples.resize(frames);
      for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          acc += static_cast<double>(raw[f * channels + c]);
        }
        wav.samples[f] = acc / (32767.0 * channels);
      }
      return wav;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw IoError("load_wav: no data chunk in " + path);
}

void save_wav(const std::string& path, std::span<const double> samples,
              std::size_t sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_wav: cannot write " + path);
  std::uint32_t data_size = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  write_raw<std::uint32_t>(out, 36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_raw<std::uint32_t>(out, 16);
  write_raw<std::uint16_t>(out, 1);  // PCM
  write_raw<std::uint16_t>(out, 1);  // mono
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate));
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate * 2));
  write_raw<std::uint16_t>(out, 2);
  write_raw<std::uint16_t>(out, 16);
  out.write("data", 4);
  write_raw<std::uint32_t>(out, data_size);
  for (double s : samples) {
    double clipped = std::clamp(s, -1.0, 1.0);
    write_raw<std::int16_t>(out,
                            static_cast<std::int16_t>(std::lround(clipped * 32767.0)));
  }
}

// ---------------------------------------------------------------------------
// Character vocabulary
// ---------------------------------------------------------------------------

CharVocab CharVocab::build(std::span<const std::string> transcripts) {
  std::set<char> seen;
  for (const std::string& text : transcripts) {
    for (char ch : text) seen.insert(ch);
  }
  std::vector<std::string> chars = {"<blank>"};
  for (char ch : seen) chars.push_back(std::string(1, ch));
  return from_chars(std::move(chars));
}

CharVocab CharVocab::from_chars(std::vector<std::string> chars) {
  if (chars.empty() || chars[0] != "<blank>") {
    throw Error("CharVocab: index 0 must be the blank");
  }
  CharVocab vocab;
  vocab.chars_ = std::move(chars);
  for (std::size_t i = 1; i < vocab.chars_.size(); ++i) {
    if (vocab.chars_[i].size() != 1) {
      throw Error("CharVocab: entry '" + vocab.chars_[i] +
                  "' is not a single character");
    }
    vocab.ids_[vocab.chars_[i][0]] = static_cast<int>(i);
  }
  return vocab;
}

bool CharVocab::has(char ch) const { return ids_.count(ch) > 0; }

std::vector<int> CharVocab::encode(const std::string& text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char ch : text) {
    auto it = ids_.find(ch);
    if (it == ids_.end()) {
      throw Error("CharVocab: character '" + std::string(1, ch) +
                  "' is out of vocabulary");
    }
    out.push_back(it->second);
  }
  return out;
}

std::string CharVocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id <= 0 || static_cast<std::size_t>(id) >= chars_.size()) {
      throw Error("CharVocab: id " + std::to_string(id) + " out of range");
    }
    out += chars_[static_cast<std::size_t>(id)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

SyntheticCorpusSpec synth_spec_from(const Config& config) {
  SyntheticCorpusSpec spec;
  spec.phoneme_count = config.get_size("synth.phonemes");
  spec.word_count = config.get_size("synth.words");
  spec.utterance_count = config.get_size("synth.utterances");
  spec.heldout_count = config.get_size("synth.heldout");
  spec.text_line_count = config.get_size("synth.text_lines");
  spec.feature_dim = config.get_size("synth.feature_dim");
  spec.min_duration = config.get_size("synth.min_dur");
  spec.max_duration = config.get_size("synth.max_dur");
  spec.words_min = config.get_size("synth.words_min");
  spec.words_max = config.get_size("synth.words_max");
  spec.sil_min = config.get_size("synth.sil_min");
  spec.sil_max = config.get_size("synth.sil_max");
  spec.sil_word_prob = config.get_double("synth.sil_word_prob");
  spec.noise = config.get_double("synth.noise");
  return spec;
}

void SyntheticCorpusSpec::validate() const {
  if (phoneme_count < 1 || phoneme_count > 26) {
    throw ConfigError("SyntheticCorpusSpec: phoneme_count must be 1..26");
  }
  if (word_count < 1 || utterance_count < 1 || feature_dim < 1 ||
      text_line_count < 1) {
    throw ConfigError("SyntheticCorpusSpec: counts must be positive");
  }
  if (min_duration < 1 || max_duration < min_duration || sil_min < 1 ||
      sil_max < sil_min || words_min < 1 || words_max < words_min) {
    throw ConfigError("SyntheticCorpusSpec: bad duration or word ranges");
  }
  if (noise < 0.0) throw ConfigError("SyntheticCorpusSpec: noise must be >= 0");
  if (sil_word_prob < 0.0 || sil_word_prob > 1.0) {
    throw ConfigError("SyntheticCorpusSpec: sil_word_prob must lie in [0, 1]");
  }
}

namespace {

std::string utterance_sentence(const std::vector<std::string>& words,
                               const SyntheticCorpusSpec& spec, Rng& rng) {
  std::size_t count =
      spec.words_min + rng.uniform_index(spec.words_max - spec.words_min + 1);
  std::string sentence;
  for (std::size_t w = 0; w < count; ++w) {
    if (w) sentence += ' ';
    sentence += words[rng.uniform_index(words.size())];
  }
  return sentence;
}

}  // namespace

SyntheticCorpus make_synthetic(const SyntheticCorpusSpec& spec,
                               const std::string& out_dir, Rng& rng) {
  spec.validate();
  std::filesystem::create_directories(std::filesystem::path(out_dir) / "features");

  // Letters double as phoneme names; a word's pronunciation is its letters.
  std::vector<std::string> letters;
  for (std::size_t i = 0; i < spec.phoneme_count; ++i) {
    letters.push_back(std::string(1, static_cast<char>('A' + i)));
  }
  std::set<std::string> word_set;
  while (word_set.size() < spec.word_count) {
    std::size_t length = 2 + rng.uniform_index(3);
    std::string word;
    for (std::size_t i = 0; i < length; ++i) {
      word += letters[rng.uniform_index(letters.size())];
    }
    word_set.insert(word);
  }
  std::map<std::string, std::vector<std::string>> entries;
  for (const std::string& word : word_set) {
    std::vector<std::string> phones;
    for (char ch : word) phones.emplace_back(1, ch);
    entries[word] = phones;
  }

  SyntheticCorpus corpus;
  corpus.lexicon = Lexicon::from_entries(entries);
  const auto& inventory = corpus.lexicon.inventory();

  corpus.prototypes = Tensor::randn({inventory.size(), spec.feature_dim}, rng);
  std::vector<std::string> words(word_set.begin(), word_set.end());

  auto synthesize = [&](Manifest& manifest, std::size_t count,
                        const std::string& prefix) {
    for (std::size_t u = 0; u < count; ++u) {
      std::string id = prefix + (u < 10 ? "00" : u < 100 ? "0" : "") +
                       std::to_string(u);
      std::string sentence = utterance_sentence(words, spec, rng);
      PhonemizedText phonemized = phonemize(sentence, corpus.lexicon);

      // Token sequence with boundary SIL decided here so the alignment and
      // the features agree exactly.
      std::vector<int> tokens;
      tokens.push_back(Lexicon::kSilId);
      std::size_t word = 0;
      for (std::size_t i = 0; i < phonemized.phonemes.size(); ++i) {
        tokens.push_back(phonemized.phonemes[i]);
        if (word < phonemized.word_ends.size() &&
            phonemized.word_ends[word] == i) {
          bool last = word + 1 == phonemized.word_ends.size();
          if (!last && rng.bernoulli(spec.sil_word_prob)) {
            tokens.push_back(Lexicon::kSilId);
          }
          ++word;
        }
      }
      tokens.push_back(Lexicon::kSilId);

      Alignment alignment;
      std::size_t cursor = 0;
      for (int token : tokens) {
        std::size_t duration;
        if (token == Lexicon::kSilId) {
          duration = spec.sil_min + rng.uniform_index(spec.sil_max - spec.sil_min + 1);
        } else {
          duration = spec.min_duration +
                     rng.uniform_index(spec.max_duration - spec.min_duration + 1);
        }
        alignment.spans.push_back({token, cursor, cursor + duration});
        cursor += duration;
      }

      Tensor features({cursor, spec.feature_dim});
      std::size_t frame = 0;
      for (const AlignmentSpan& span : alignment.spans) {
        for (std::size_t t = span.start; t < span.end; ++t, ++frame) {
          for (std::size_t d = 0; d < spec.feature_dim; ++d) {
            double value = corpus.prototypes.at(
                static_cast<std::size_t>(span.phoneme), d);
            if (spec.noise > 0.0) value += rng.normal(0.0, spec.noise);
            features.at(frame, d) = value;
          }
        }
      }

      std::string rel_path = "features/" + id + ".bin";
      save_features((std::filesystem::path(out_dir) / rel_path).string(),
                    features);
      manifest.items.push_back({id, rel_path, cursor, sentence});
      corpus.alignments[id] = std::move(alignment);
    }
  };

  corpus.train.base_dir = out_dir;
  corpus.heldout.base_dir = out_dir;
  synthesize(corpus.train, spec.utterance_count, "utt_");
  synthesize(corpus.heldout, spec.heldout_count, "held_");

  for (std::size_t i = 0; i < spec.text_line_count; ++i) {
    corpus.text_lines.push_back(utterance_sentence(words, spec, rng));
  }
  return corpus;
}

void save_synthetic(const SyntheticCorpus& corpus, const std::string& out_dir) {
  std::filesystem::path dir(out_dir);
  corpus.lexicon.save((dir / "lexicon.txt").string());
  corpus.train.save((dir / "manifest.tsv").string());
  corpus.heldout.save((dir / "manifest_heldout.tsv").string());
  save_alignments((dir / "alignments.tsv").string(), corpus.alignments,
                  corpus.lexicon);
  save_text_lines((dir / "text_corpus.txt").string(), corpus.text_lines);
}

}  // namespace speechtext

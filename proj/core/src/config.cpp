// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/config.hpp"

#include <algorithm>
#include <fstream>

#include "speechtext/common.hpp"

namespace speechtext {

namespace {

const std::vector<ConfigKey>& key_table() {
  static const std::vector<ConfigKey> keys = {
      // Model body.
      {"model.dim", "32", "transformer model dimension"},
      {"model.inner_dim", "64", "feed-forward inner dimension"},
      {"model.heads", "4", "attention heads"},
      {"model.layers_speech", "2", "speech encoder layers"},
      {"model.layers_text", "2", "text encoder layers"},
      {"model.layers_shared", "2", "shared encoder layers"},
      {"model.layers_char", "1", "character encoding layers"},
      {"model.conv_pos_kernel", "7", "positional convolution kernel size"},
      {"model.conv_pos_groups", "4", "positional convolution groups"},
      {"model.conv_pos_text", "true", "apply the positional convolution to text"},
      {"model.use_conv_pos", "true", "enable the positional convolution"},
      {"model.use_rel_bias", "true", "enable the bucketed relative position bias"},
      {"model.rel_bias_buckets", "32", "relative position buckets"},
      {"model.rel_bias_max_distance", "128", "largest resolvable relative offset"},
      {"model.feature_dim", "8", "speech input feature dimension"},
      {"model.hubert_dim", "16", "codeword embedding dimension"},
      {"model.hubert_temperature", "0.1", "cosine logit temperature"},
      {"model.codewords", "16", "masked-prediction codeword count"},

      // Span masking.
      {"mask.speech_prob", "0.08", "speech mask start probability per frame"},
      {"mask.speech_span", "10", "speech mask span length"},
      {"mask.text_prob", "0.03", "text mask start probability per frame"},
      {"mask.text_span", "20", "text mask span length"},

      // Text pipeline.
      {"text.sil_rate", "0.25", "interior SIL insertion rate"},
      {"text.duration_cutoff", "0.98", "duration distribution cumulative cutoff"},
      {"text.oov_policy", "skip", "out-of-vocabulary policy: skip | spell"},

      // Paired task.
      {"paired.swap_prob", "0.6", "per-span swap probability"},
      {"paired.align", "swap", "alignment function: swap | ce_loss | cross_attention"},

      // Pre-training.
      {"train.steps", "500", "pre-training steps"},
      {"train.warmup_steps", "50", "linear warmup steps"},
      {"train.peak_lr", "0.002", "peak learning rate"},
      {"train.batch_frames", "400", "frame budget per batch"},
      {"train.ctc_start_step", "100", "first step that adds the character CTC loss"},
      {"train.enable_mlm", "true", "train the phoneme MLM objective"},
      {"train.enable_ctc", "true", "train the character CTC objective"},
      {"train.paired_fraction", "1.0", "fraction of paired data used (0 disables)"},
      {"train.adam_beta1", "0.9", "Adam beta1"},
      {"train.adam_beta2", "0.98", "Adam beta2"},
      {"train.adam_eps", "1e-6", "Adam epsilon"},
      {"train.clip_norm", "10", "global gradient norm clip"},
      {"train.weight_decay", "0", "decoupled weight decay"},
      {"train.seed", "1", "pre-training seed"},

      // Fine-tuning.
      {"finetune.steps", "600", "fine-tuning steps"},
      {"finetune.peak_lr", "0.003", "fine-tuning peak learning rate"},
      {"finetune.warm_frac", "0.1", "tri-stage warmup fraction"},
      {"finetune.hold_frac", "0.4", "tri-stage hold fraction"},
      {"finetune.decay_frac", "0.5", "tri-stage decay fraction"},
      {"finetune.floor_ratio", "0.05", "final learning rate as a ratio of peak"},
      {"finetune.use_char_layer", "true", "run the character encoding layer"},
      {"finetune.use_char_head", "true", "start from the pre-trained character head"},
      {"finetune.batch_frames", "400", "frame budget per fine-tuning batch"},
      {"finetune.seed", "1", "fine-tuning seed"},

      // Decoding.
      {"decode.beam", "16", "beam size"},
      {"decode.w1", "0", "language model weight"},
      {"decode.w2", "0", "length bonus weight"},
      {"decode.lm_order", "4", "n-gram order"},
      {"decode.lm_add_k", "0.1", "n-gram add-k smoothing constant"},
      {"decode.lm_backoff", "0.4", "n-gram backoff weight"},

      // Pseudo-labeling.
      {"labeler.classes", "16", "k-means classes, first iteration"},
      {"labeler.iterations", "25", "Lloyd iterations"},
      {"labeler.relabel_classes", "32", "k-means classes, second iteration"},
      {"labeler.relabel_layer", "-1", "hidden layer for relabeling (-1 = speech encoder output)"},
      {"labeler.frame_ms", "25", "analysis frame length in ms"},
      {"labeler.hop_ms", "10", "analysis hop in ms"},
      {"labeler.mel_filters", "26", "mel filterbank size"},

      // Synthetic corpus.
      {"synth.phonemes", "14", "phoneme inventory size (letters)"},
      {"synth.words", "16", "lexicon size"},
      {"synth.utterances", "20", "training utterances"},
      {"synth.heldout", "12", "held-out utterances"},
      {"synth.text_lines", "60", "unlabeled text lines"},
      {"synth.feature_dim", "8", "feature dimension"},
      {"synth.min_dur", "3", "minimum frames per phoneme"},
      {"synth.max_dur", "6", "maximum frames per phoneme"},
      {"synth.words_min", "2", "minimum words per sentence"},
      {"synth.words_max", "3", "maximum words per sentence"},
      {"synth.sil_min", "2", "minimum SIL frames"},
      {"synth.sil_max", "3", "maximum SIL frames"},
      {"synth.sil_word_prob", "1.0", "interior SIL probability"},
      {"synth.noise", "0.05", "feature noise stddev"},
  };
  return keys;
}

std::string trim(const std::string& text) {
  std::size_t begin = text.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  std::size_t end = text.find_last_not_of(" \t\r");
  return text.substr(begin, end - begin + 1);
}

}  // namespace

Config::Config() {
  for (const ConfigKey& key : key_table()) {
    values_[key.key] = key.default_value;
  }
}

bool Config::is_known(const std::string& key) {
  for (const ConfigKey& entry : key_table()) {
    if (key == entry.key) return true;
  }
  return false;
}

const std::vector<ConfigKey>& Config::registry() { return key_table(); }

void Config::set(const std::string& key, const std::string& value) {
  if (!is_known(key)) {
    throw ConfigError("Config: unknown key '" + key + "'");
  }
  values_[key] = value;
}

void Config::apply_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("Config: override '" + assignment +
                      "' is not of the form key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

Config Config::load(const std::string& path) {
  Config config;
  config.load_overlay(path);
  return config;
}

void Config::load_overlay(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("Config: cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("Config: " + path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    }
    try {
      set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    } catch (const ConfigError& err) {
      throw ConfigError("Config: " + path + ":" + std::to_string(lineno) +
                        ": " + err.what());
    }
  }
}

std::string Config::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError("Config: unknown key '" + key + "'");
  }
  return it->second;
}

double Config::get_double(const std::string& key) const {
  const std::string value = get_string(key);
  try {
    std::size_t used = 0;
    double parsed = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("Config: key '" + key + "' has non-numeric value '" +
                      value + "'");
  }
}

std::int64_t Config::get_int(const std::string& key) const {
  const std::string value = get_string(key);
  try {
    std::size_t used = 0;
    long long parsed = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("Config: key '" + key + "' has non-integer value '" +
                      value + "'");
  }
}

std::size_t Config::get_size(const std::string& key) const {
  std::int64_t value = get_int(key);
  if (value < 0) {
    throw ConfigError("Config: key '" + key + "' must be non-negative");
  }
  return static_cast<std::size_t>(value);
}

bool Config::get_bool(const std::string& key) const {
  std::string value = get_string(key);
  std::transform(value.begin(), value.end(), value.begin(), ::tolower);
  if (value == "true" || value == "1" || value == "yes" || value == "on") {
    return true;
  }
  if (value == "false" || value == "0" || value == "no" || value == "off") {
    return false;
  }
  throw ConfigError("Config: key '" + key + "' has non-boolean value '" +
                    value + "'");
}

}  // namespace speechtext

// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/decode.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "speechtext/common.hpp"
#include "speechtext/graph.hpp"

namespace speechtext {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void DecodeConfig::validate() const {
  if (beam < 1) throw ConfigError("DecodeConfig: beam must be at least 1");
  if (lm_order < 1) throw ConfigError("DecodeConfig: lm_order must be at least 1");
}

std::vector<int> greedy_decode(const Tensor& logits) {
  if (logits.ndim() != 2 || logits.cols() < 2) {
    throw ShapeError("greedy_decode: logits must be [T, V] with a blank");
  }
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    int best = 0;
    double best_v = logits.at(t, 0);
    for (std::size_t v = 1; v < logits.cols(); ++v) {
      if (logits.at(t, v) > best_v) {
        best_v = logits.at(t, v);
        best = static_cast<int>(v);
      }
    }
    if (best != 0 && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// N-gram language model
// ---------------------------------------------------------------------------

NGramLM NGramLM::train(const std::vector<std::vector<int>>& corpus,
                       std::size_t order, std::size_t vocab, double add_k,
                       double backoff) {
  if (order < 1) throw ConfigError("NGramLM: order must be at least 1");
  if (vocab < 1) throw ConfigError("NGramLM: vocabulary must be non-empty");
  if (corpus.empty()) throw Error("NGramLM: corpus is empty");
  if (add_k <= 0.0) throw ConfigError("NGramLM: add_k must be positive");
  if (backoff <= 0.0 || backoff > 1.0) {
    throw ConfigError("NGramLM: backoff weight must lie in (0, 1]");
  }

  NGramLM lm;
  lm.order_ = order;
  lm.vocab_ = vocab;
  lm.add_k_ = add_k;
  lm.backoff_ = backoff;

  std::map<std::vector<int>, std::pair<std::size_t, std::map<int, std::size_t>>>
      counts;
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] < 0 || static_cast<std::size_t>(seq[i]) >= vocab) {
        throw Error("NGramLM: symbol outside vocabulary");
      }
      std::size_t max_ctx = std::min<std::size_t>(order - 1, i);
      for (std::size_t len = 0; len <= max_ctx; ++len) {
        std::vector<int> ctx(seq.begin() + (i - len), seq.begin() + i);
        auto& slot = counts[ctx];
        slot.first += 1;
        slot.second[seq[i]] += 1;
      }
    }
  }

  double v = static_cast<double>(vocab);
  for (const auto& [ctx, slot] : counts) {
    Context entry;
    double denom = static_cast<double>(slot.first) + add_k * v;
    for (const auto& [sym, c] : slot.second) {
      entry.logp[sym] = std::log((static_cast<double>(c) + add_k) / denom);
    }
    entry.unk_logp = std::log(add_k / denom);
    lm.contexts_[ctx] = std::move(entry);
  }
  return lm;
}

const NGramLM::Context* NGramLM::find_context(
    std::span<const int> context) const {
  std::vector<int> key(context.begin(), context.end());
  auto it = contexts_.find(key);
  return it == contexts_.end() ? nullptr : &it->second;
}

double NGramLM::logp(int symbol, std::span<const int> history) const {
  if (symbol < 0 || static_cast<std::size_t>(symbol) >= vocab_) {
    throw Error("NGramLM: symbol outside vocabulary");
  }
  std::size_t ctx_len = std::min(history.size(), order_ - 1);
  std::span<const int> context = history.subspan(history.size() - ctx_len);
  double penalty = 0.0;
  while (true) {
    const Context* entry = find_context(context);
    if (entry != nullptr) {
      auto it = entry->logp.find(symbol);
      double base = it != entry->logp.end() ? it->second : entry->unk_logp;
      return penalty + base;
    }
    if (context.empty()) {
      // No unigram table means an untrained model; fall back to uniform.
      return penalty + std::log(1.0 / static_cast<double>(vocab_));
    }
    penalty += std::log(backoff_);
    context = context.subspan(1);
  }
}

double NGramLM::sequence_logp(std::span<const int> sequence) const {
  double total = 0.0;
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    total += logp(sequence[i], sequence.subspan(0, i));
  }
  return total;
}

double NGramLM::perplexity(const std::vector<std::vector<int>>& corpus) const {
  double log_total = 0.0;
  std::size_t symbols = 0;
  for (const auto& seq : corpus) {
    log_total += sequence_logp(seq);
    symbols += seq.size();
  }
  if (symbols == 0) throw Error("NGramLM: empty corpus for perplexity");
  return std::exp(-log_total / static_cast<double>(symbols));
}

void NGramLM::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("NGramLM: cannot write " + path);
  out << "order " << order_ << '\n';
  out << "vocab " << vocab_ << '\n';
  out << "addk " << format_double(add_k_) << '\n';
  out << "backoff " << format_double(backoff_) << '\n';
  for (const auto& [ctx, entry] : contexts_) {
    std::string prefix;
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      if (i) prefix += ' ';
      prefix += std::to_string(ctx[i]);
    }
    for (const auto& [sym, lp] : entry.logp) {
      out << prefix << '|' << sym << '\t' << format_double(lp) << '\n';
    }
    out << prefix << "|*\t" << format_double(entry.unk_logp) << '\n';
  }
}

NGramLM NGramLM::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("NGramLM: cannot open " + path);
  NGramLM lm;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream header(line);
    std::string key;
    if (line.find('|') == std::string::npos) {
      header >> key;
      if (key == "order") header >> lm.order_;
      else if (key == "vocab") header >> lm.vocab_;
      else if (key == "addk") header >> lm.add_k_;
      else if (key == "backoff") header >> lm.backoff_;
      else throw IoError("NGramLM: " + path + ":" + std::to_string(lineno) +
                         ": unknown header '" + key + "'");
      continue;
    }
    auto tab = line.find('\t');
    auto bar = line.find('|');
    if (tab == std::string::npos || bar > tab) {
      throw IoError("NGramLM: " + path + ":" + std::to_string(lineno) +
                    ": expected `context|symbol<TAB>logp`");
    }
    std::vector<int> ctx;
    {
      std::istringstream ctx_in(line.substr(0, bar));
      int id;
      while (ctx_in >> id) ctx.push_back(id);
    }
    std::string sym = line.substr(bar + 1, tab - bar - 1);
    double lp = std::stod(line.substr(tab + 1));
    Context& entry = lm.contexts_[ctx];
    if (sym == "*") {
      entry.unk_logp = lp;
    } else {
      entry.logp[std::stoi(sym)] = lp;
    }
  }
  if (lm.vocab_ == 0) throw IoError("NGramLM: " + path + " missing vocab header");
  return lm;
}

// ---------------------------------------------------------------------------
// Prefix beam search
// ---------------------------------------------------------------------------

namespace {

struct Beam {
  double lpb = kNegInf;   // log prob of paths ending in blank
  double lpnb = kNegInf;  // log prob of paths ending in the last symbol
  double lm = 0.0;        // accumulated LM log prob of the prefix
};

double beam_score(const std::vector<int>& prefix, const Beam& beam,
                  const DecodeConfig& cfg) {
  return log_add(beam.lpb, beam.lpnb) + cfg.lm_weight * beam.lm +
         cfg.length_bonus * static_cast<double>(prefix.size());
}

}  // namespace

Hypothesis beam_decode(const Tensor& log_probs, const NGramLM* lm,
                       const DecodeConfig& config) {
  config.validate();
  if (log_probs.ndim() != 2 || log_probs.cols() < 2) {
    throw ShapeError("beam_decode: log_probs must be [T, V] with a blank");
  }
  std::size_t frames = log_probs.rows(), vocab = log_probs.cols();

  std::map<std::vector<int>, Beam> beams;
  beams[{}] = Beam{0.0, kNegInf, 0.0};

  for (std::size_t t = 0; t < frames; ++t) {
    std::map<std::vector<int>, Beam> next;
    for (const auto& [prefix, beam] : beams) {
      double total = log_add(beam.lpb, beam.lpnb);
      // Blank keeps the prefix.
      {
        Beam& dst = next.try_emplace(prefix).first->second;
        dst.lpb = log_add(dst.lpb, total + log_probs.at(t, 0));
        dst.lm = beam.lm;
      }
      for (std::size_t v = 1; v < vocab; ++v) {
        int sym = static_cast<int>(v);
        double lpc = log_probs.at(t, v);
        if (!prefix.empty() && prefix.back() == sym) {
          // Repeat without a separating blank merges into the same prefix.
          Beam& same = next.try_emplace(prefix).first->second;
          same.lpnb = log_add(same.lpnb, beam.lpnb + lpc);
          same.lm = beam.lm;
          // Extending requires the previous emission to end in blank.
          std::vector<int> extended = prefix;
          extended.push_back(sym);
          Beam& dst = next.try_emplace(extended).first->second;
          if (dst.lpb == kNegInf && dst.lpnb == kNegInf) {
            dst.lm = beam.lm + (lm ? lm->logp(sym, prefix) : 0.0);
          }
          dst.lpnb = log_add(dst.lpnb, beam.lpb + lpc);
        } else {
          std::vector<int> extended = prefix;
          extended.push_back(sym);
          Beam& dst = next.try_emplace(extended).first->second;
          if (dst.lpb == kNegInf && dst.lpnb == kNegInf) {
            dst.lm = beam.lm + (lm ? lm->logp(sym, prefix) : 0.0);
          }
          dst.lpnb = log_add(dst.lpnb, total + lpc);
        }
      }
    }

    // Prune to the beam size; ties resolve lexicographically so the search
    // is fully deterministic.
    if (next.size() > config.beam) {
      std::vector<std::pair<const std::vector<int>*, const Beam*>> ranked;
      ranked.reserve(next.size());
      for (const auto& [prefix, beam] : next) {
        ranked.emplace_back(&prefix, &beam);
      }
      std::sort(ranked.begin(), ranked.end(),
                [&](const auto& a, const auto& b) {
                  double sa = beam_score(*a.first, *a.second, config);
                  double sb = beam_score(*b.first, *b.second, config);
                  if (sa != sb) return sa > sb;
                  return *a.first < *b.first;
                });
      std::map<std::vector<int>, Beam> pruned;
      for (std::size_t i = 0; i < config.beam && i < ranked.size(); ++i) {
        pruned[*ranked[i].first] = *ranked[i].second;
      }
      next = std::move(pruned);
    }
    beams = std::move(next);
  }

  const std::vector<int>* best_prefix = nullptr;
  const Beam* best_beam = nullptr;
  double best_score = kNegInf;
  for (const auto& [prefix, beam] : beams) {
    double score = beam_score(prefix, beam, config);
    if (best_prefix == nullptr || score > best_score ||
        (score == best_score && prefix < *best_prefix)) {
      best_prefix = &prefix;
      best_beam = &beam;
      best_score = score;
    }
  }

  Hypothesis hyp;
  hyp.symbols = *best_prefix;
  hyp.score = best_score;
  hyp.ctc_logp = log_add(best_beam->lpb, best_beam->lpnb);
  hyp.lm_logp = best_beam->lm;
  return hyp;
}

// ---------------------------------------------------------------------------
// WER
// ---------------------------------------------------------------------------

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

double wer(std::span<const std::string> hyp, std::span<const std::string> ref) {
  if (ref.empty()) throw Error("wer: reference is empty");
  std::size_t n = hyp.size(), m = ref.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(m);
}

double wer(const std::string& hyp, const std::string& ref) {
  std::vector<std::string> h = split_words(hyp);
  std::vector<std::string> r = split_words(ref);
  return wer(std::span<const std::string>(h), std::span<const std::string>(r));
}

}  // namespace speechtext

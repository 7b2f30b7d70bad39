// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/paired.hpp"

#include <fstream>
#include <sstream>

#include "speechtext/common.hpp"
#include "speechtext/textpipe.hpp"

namespace speechtext {

void Alignment::validate() const {
  if (spans.empty()) throw Error("Alignment: no spans");
  std::size_t cursor = 0;
  for (const AlignmentSpan& span : spans) {
    if (span.start != cursor) {
      throw Error("Alignment: gap or overlap at frame " +
                  std::to_string(span.start) + " (expected " +
                  std::to_string(cursor) + ")");
    }
    if (span.end <= span.start) {
      throw Error("Alignment: empty span at frame " +
                  std::to_string(span.start));
    }
    cursor = span.end;
  }
}

std::vector<int> frame_phonemes(const Alignment& alignment) {
  alignment.validate();
  std::vector<int> out;
  out.reserve(alignment.frames());
  for (const AlignmentSpan& span : alignment.spans) {
    out.insert(out.end(), span.end - span.start, span.phoneme);
  }
  return out;
}

std::vector<std::size_t> SwapPlan::selected_frames() const {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < from_text.size(); ++t) {
    if (from_text[t]) out.push_back(t);
  }
  return out;
}

SwapPlan plan_swap(const Alignment& alignment,
                   std::span<const std::size_t> speech_mask,
                   double swap_probability, Rng& rng) {
  if (swap_probability < 0.0 || swap_probability > 1.0) {
    throw ConfigError("plan_swap: swap_probability must lie in [0, 1]");
  }
  alignment.validate();
  std::size_t frames = alignment.frames();
  std::vector<bool> masked(frames, false);
  for (std::size_t t : speech_mask) {
    if (t < frames) masked[t] = true;
  }
  SwapPlan plan;
  plan.from_text.assign(frames, false);
  for (std::size_t s = 0; s < alignment.spans.size(); ++s) {
    const AlignmentSpan& span = alignment.spans[s];
    bool touches_mask = false;
    for (std::size_t t = span.start; t < span.end; ++t) {
      if (masked[t]) {
        touches_mask = true;
        break;
      }
    }
    if (touches_mask) continue;  // whole-phoneme rule
    if (!rng.bernoulli(swap_probability)) continue;
    plan.selected_spans.push_back(s);
    for (std::size_t t = span.start; t < span.end; ++t) {
      plan.from_text[t] = true;
    }
  }
  return plan;
}

Tensor swap_representations(const Tensor& speech_repr, const Tensor& text_repr,
                            const SwapPlan& plan) {
  if (!speech_repr.same_shape(text_repr) || speech_repr.ndim() != 2) {
    throw ShapeError("swap_representations: representation shapes differ");
  }
  if (plan.from_text.size() != speech_repr.rows()) {
    throw ShapeError("swap_representations: plan length mismatch");
  }
  Tensor out = speech_repr;
  std::size_t d = speech_repr.cols();
  for (std::size_t t = 0; t < plan.from_text.size(); ++t) {
    if (!plan.from_text[t]) continue;
    for (std::size_t c = 0; c < d; ++c) out.at(t, c) = text_repr.at(t, c);
  }
  return out;
}

NodeRef swap_representations(Graph& graph, NodeRef speech_repr,
                             NodeRef text_repr, const SwapPlan& plan) {
  if (plan.from_text.size() != graph.value(speech_repr).rows()) {
    throw ShapeError("swap_representations: plan length mismatch");
  }
  return graph.row_select(speech_repr, text_repr, plan.selected_frames());
}

std::map<std::string, Alignment> load_alignments(const std::string& path,
                                                 const Lexicon& lexicon) {
  std::ifstream in(path);
  if (!in) throw IoError("load_alignments: cannot open " + path);
  std::map<std::string, Alignment> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    std::string utt, phoneme;
    std::size_t start, end;
    std::getline(row, utt, '\t');
    std::getline(row, phoneme, '\t');
    if (!(row >> start)) {
      throw IoError("load_alignments: " + path + ":" + std::to_string(lineno) +
                    ": expected utt<TAB>PHONEME<TAB>start<TAB>end");
    }
    row >> end;
    out[utt].spans.push_back({lexicon.token_id(phoneme), start, end});
  }
  for (auto& [utt, alignment] : out) {
    alignment.validate();
  }
  return out;
}

void save_alignments(const std::string& path,
                     const std::map<std::string, Alignment>& alignments,
                     const Lexicon& lexicon) {
  std::ofstream out(path);
  if (!out) throw IoError("save_alignments: cannot write " + path);
  for (const auto& [utt, alignment] : alignments) {
    for (const AlignmentSpan& span : alignment.spans) {
      out << utt << '\t' << lexicon.token(span.phoneme) << '\t' << span.start
          << '\t' << span.end << '\n';
    }
  }
}

}  // namespace speechtext

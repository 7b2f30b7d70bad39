// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "speechtext/graph.hpp"
#include "speechtext/tensor.hpp"

namespace speechtext {

class Rng;
class Lexicon;

// One contiguous phoneme span of a forced alignment, end exclusive.
struct AlignmentSpan {
  int phoneme = 0;
  std::size_t start = 0;
  std::size_t end = 0;
};

// Frame-exact forced alignment: spans are sorted, contiguous, non-empty and
// cover [0, frames) without gaps or overlaps.
struct Alignment {
  std::vector<AlignmentSpan> spans;

  std::size_t frames() const { return spans.empty() ? 0 : spans.back().end; }
  void validate() const;
};

// Phoneme id repeated over its span; length equals the frame count.
std::vector<int> frame_phonemes(const Alignment& alignment);

// Which spans get text representations. Spans touching any masked frame are
// never selected; the per-frame flags are derivable but kept explicit.
struct SwapPlan {
  std::vector<std::size_t> selected_spans;
  std::vector<bool> from_text;  // per frame

  std::vector<std::size_t> selected_frames() const;
};

// Every phoneme span lying fully inside the unmasked region is selected
// independently with swap_probability.
SwapPlan plan_swap(const Alignment& alignment,
                   std::span<const std::size_t> speech_mask,
                   double swap_probability, Rng& rng);

// Frames in selected spans come from text_repr, every other frame is bit
// identical to speech_repr.
Tensor swap_representations(const Tensor& speech_repr, const Tensor& text_repr,
                            const SwapPlan& plan);
NodeRef swap_representations(Graph& graph, NodeRef speech_repr,
                             NodeRef text_repr, const SwapPlan& plan);

// Alignment file: `utt_id<TAB>PHONEME<TAB>start_frame<TAB>end_frame`, one
// span per line, spans of one utterance sorted and contiguous.
std::map<std::string, Alignment> load_alignments(const std::string& path,
                                                 const Lexicon& lexicon);
void save_alignments(const std::string& path,
                     const std::map<std::string, Alignment>& alignments,
                     const Lexicon& lexicon);

}  // namespace speechtext

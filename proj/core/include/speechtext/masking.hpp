// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "speechtext/tensor.hpp"

namespace speechtext {

class Rng;

// Span mask parameters: every position is independently a span start with
// start_probability, and a start masks the next span_length steps. Spans may
// overlap and are clipped at the sequence end.
struct MaskSpec {
  double start_probability = 0.08;
  std::size_t span_length = 10;

  void validate() const;
};

struct MaskSample {
  std::vector<std::size_t> starts;     // sampled span starts, ascending
  std::vector<std::size_t> positions;  // union of spans, ascending, unique
};

MaskSample sample_mask(std::size_t length, const MaskSpec& spec, Rng& rng);

// Replace the masked rows of [T, d] frames with the mask embedding (a single
// row of width d). Unmasked rows are bit identical to the input.
Tensor apply_mask(const Tensor& frames, std::span<const std::size_t> mask,
                  const Tensor& mask_embedding);

// Complement of `mask` within [0, length).
std::vector<std::size_t> unmasked_positions(std::size_t length,
                                            std::span<const std::size_t> mask);

}  // namespace speechtext

// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/masking.hpp"

#include <algorithm>
#include <string>

#include "speechtext/common.hpp"

namespace speechtext {

void MaskSpec::validate() const {
  if (start_probability < 0.0 || start_probability > 1.0) {
    throw ConfigError("MaskSpec: start_probability must lie in [0, 1]");
  }
  if (span_length < 1) {
    throw ConfigError("MaskSpec: span_length must be at least 1");
  }
}

MaskSample sample_mask(std::size_t length, const MaskSpec& spec, Rng& rng) {
  spec.validate();
  if (length < 1) throw Error("sample_mask: length must be at least 1");
  MaskSample out;
  std::vector<bool> masked(length, false);
  for (std::size_t t = 0; t < length; ++t) {
    if (!rng.bernoulli(spec.start_probability)) continue;
    out.starts.push_back(t);
    std::size_t end = std::min(length, t + spec.span_length);
    for (std::size_t k = t; k < end; ++k) masked[k] = true;
  }
  for (std::size_t t = 0; t < length; ++t) {
    if (masked[t]) out.positions.push_back(t);
  }
  return out;
}

Tensor apply_mask(const Tensor& frames, std::span<const std::size_t> mask,
                  const Tensor& mask_embedding) {
  if (frames.ndim() != 2) throw ShapeError("apply_mask: frames must be [T, d]");
  std::size_t d = frames.cols();
  if (mask_embedding.numel() != d) {
    throw ShapeError("apply_mask: mask embedding width " +
                     std::to_string(mask_embedding.numel()) +
                     " does not match frame width " + std::to_string(d));
  }
  Tensor out = frames;
  for (std::size_t r : mask) {
    if (r >= frames.rows()) {
      throw Error("apply_mask: mask index " + std::to_string(r) +
                  " out of range for " + std::to_string(frames.rows()) +
                  " frames");
    }
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) = mask_embedding.at(c);
  }
  return out;
}

std::vector<std::size_t> unmasked_positions(
    std::size_t length, std::span<const std::size_t> mask) {
  std::vector<bool> masked(length, false);
  for (std::size_t r : mask) {
    if (r < length) masked[r] = true;
  }
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < length; ++t) {
    if (!masked[t]) out.push_back(t);
  }
  return out;
}

}  // namespace speechtext

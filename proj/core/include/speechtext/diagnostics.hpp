// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "speechtext/tensor.hpp"

namespace speechtext {

struct HeatMap {
  Tensor matrix;  // [speech_frames, text_frames]
  std::size_t layer_index = 0;
  std::string utterance_id;
};

// Entry (i, j) is the cosine similarity of speech row i and text row j.
// A zero row produces similarity 0.
HeatMap similarity_heatmap(const Tensor& h_speech, const Tensor& h_text,
                           std::size_t layer_index = 0,
                           std::string utterance_id = {});

// Bilinear resize with corner alignment; constants are preserved exactly.
Tensor bilinear_resize(const Tensor& map, std::size_t rows, std::size_t cols);

// Resize every map to the target shape, min-max normalize each one (a
// constant map normalizes to all 0.5), then average elementwise. Output
// entries lie in [0, 1].
Tensor aggregate_heatmaps(std::span<const HeatMap> maps, std::size_t rows,
                          std::size_t cols);

// Mean of entries within the relative band |i/rows - j/cols| < band minus
// the mean of the remaining entries. Positive when mass concentrates along
// the monotone alignment diagonal.
double diagonal_dominance(const Tensor& map, double band);

// Top-2 principal components of the mean-centered rows. Deterministic: the
// sign of each component is fixed so its largest-magnitude coefficient is
// positive. Needs at least 3 rows.
std::vector<std::array<double, 2>> project_2d(const Tensor& states);

// Eigenvalues of the row covariance, descending (for spectrum checks).
std::vector<double> covariance_spectrum(const Tensor& states);

void write_csv(const std::string& path, const Tensor& matrix);
// Portable graymap (P2), values scaled to [0, 255] by min-max.
void write_pgm(const std::string& path, const Tensor& matrix);

}  // namespace speechtext

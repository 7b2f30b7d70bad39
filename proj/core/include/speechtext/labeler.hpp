// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "speechtext/tensor.hpp"

namespace speechtext {

class Rng;

// MFCC extraction parameters. 13 cepstral coefficients plus first and second
// temporal differences give the 39-dim feature.
struct MfccConfig {
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t mel_filters = 26;
  std::size_t cepstra = 13;
  double pre_emphasis = 0.97;
  double low_freq_hz = 20.0;
};

// [T, 3 * cepstra] features from a mono waveform. Requires at least one full
// frame of samples and a sample rate that leaves room for the mel band.
Tensor compute_mfcc(std::span<const double> samples, double sample_rate,
                    const MfccConfig& config = {});

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// K-means codebook over feature rows.
struct Codebook {
  Tensor centroids;  // [C, dim]

  std::size_t classes() const { return centroids.rows(); }
  std::size_t dim() const { return centroids.cols(); }
};

// K-means++ seeding followed by Lloyd iterations. Deterministic given the
// rng. Inertia is checked to be non-increasing on every iteration; the
// history is exposed for callers that want to assert it too. An empty
// cluster is re-seeded to the point farthest from its assigned centroid.
Codebook kmeans_fit(const Tensor& rows, std::size_t classes,
                    std::size_t iterations, Rng& rng,
                    std::vector<double>* inertia_history = nullptr);

// Nearest centroid per row by Euclidean distance; ties go to the lowest
// centroid index.
std::vector<int> assign_labels(const Tensor& rows, const Codebook& codebook);

double kmeans_inertia(const Tensor& rows, const Codebook& codebook);

class Model;
struct Manifest;

// First-iteration pseudo labels: pool the feature rows of every utterance,
// fit one codebook, assign per utterance.
std::map<std::string, std::vector<int>> label_manifest(
    const Manifest& manifest, std::size_t classes, std::size_t iterations,
    Rng& rng, Codebook* codebook_out = nullptr);

// Second-iteration pseudo labels: run every utterance through the model
// without masking, collect the hidden states of one layer, fit a fresh
// codebook and assign labels. layer_index -1 selects the speech encoder
// output; otherwise it indexes the captured layers (0 = embedded input).
std::map<std::string, std::vector<int>> relabel_from_hidden(
    const Model& model, const Manifest& manifest, long layer_index,
    std::size_t classes, std::size_t iterations, Rng& rng,
    Codebook* codebook_out = nullptr);

}  // namespace speechtext

// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/labeler.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <set>
#include <string>

#include "speechtext/common.hpp"
#include "speechtext/corpus.hpp"
#include "speechtext/encoder.hpp"

namespace speechtext {

namespace {

// Iterative radix-2 FFT, in place. Size must be a power of two.
void fft(std::vector<std::complex<double>>& a) {
  std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    std::complex<double> w_len(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= w_len;
      }
    }
  }
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Regression deltas over a +-2 window with edge replication.
std::vector<double> delta_column(const std::vector<double>& column) {
  const int window = 2;
  double denom = 0.0;
  for (int n = 1; n <= window; ++n) denom += 2.0 * n * n;
  std::size_t frames = column.size();
  std::vector<double> out(frames, 0.0);
  auto clamp_at = [&](long t) {
    return column[static_cast<std::size_t>(
        std::clamp<long>(t, 0, static_cast<long>(frames) - 1))];
  };
  for (std::size_t t = 0; t < frames; ++t) {
    double acc = 0.0;
    for (int n = 1; n <= window; ++n) {
      acc += n * (clamp_at(static_cast<long>(t) + n) -
                  clamp_at(static_cast<long>(t) - n));
    }
    out[t] = acc / denom;
  }
  return out;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

Tensor compute_mfcc(std::span<const double> samples, double sample_rate,
                    const MfccConfig& config) {
  std::size_t frame_len =
      static_cast<std::size_t>(sample_rate * config.frame_ms / 1000.0);
  std::size_t hop =
      static_cast<std::size_t>(sample_rate * config.hop_ms / 1000.0);
  if (frame_len < 2 || hop < 1) {
    throw Error("compute_mfcc: frame or hop collapses to zero samples");
  }
  if (samples.size() < frame_len) {
    throw Error("compute_mfcc: input shorter than one frame (" +
                std::to_string(samples.size()) + " < " +
                std::to_string(frame_len) + " samples)");
  }
  double nyquist = sample_rate / 2.0;
  if (nyquist <= config.low_freq_hz * 2.0) {
    throw Error("compute_mfcc: sample rate " + std::to_string(sample_rate) +
                " is below the analysis band");
  }

  std::size_t fft_size = next_pow2(frame_len);
  std::size_t bins = fft_size / 2 + 1;
  std::size_t frames = (samples.size() - frame_len) / hop + 1;

  // Triangular mel filterbank between low_freq and nyquist.
  std::size_t filters = config.mel_filters;
  double mel_low = hz_to_mel(config.low_freq_hz);
  double mel_high = hz_to_mel(nyquist);
  std::vector<double> edges(filters + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    double mel = mel_low + (mel_high - mel_low) * static_cast<double>(i) /
                               static_cast<double>(filters + 1);
    edges[i] = mel_to_hz(mel) / sample_rate * static_cast<double>(fft_size);
  }

  std::vector<double> window(frame_len);
  for (std::size_t i = 0; i < frame_len; ++i) {
    window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i /
                                       static_cast<double>(frame_len - 1));
  }

  std::size_t cepstra = config.cepstra;
  Tensor features({frames, 3 * cepstra});
  std::vector<std::vector<double>> static_coeffs(
      cepstra, std::vector<double>(frames, 0.0));

  std::vector<std::complex<double>> buffer(fft_size);
  std::vector<double> filter_energy(filters);
  for (std::size_t f = 0; f < frames; ++f) {
    std::size_t start = f * hop;
    for (std::size_t i = 0; i < fft_size; ++i) {
      if (i < frame_len) {
        double x = samples[start + i];
        double prev = (start + i) > 0 ? samples[start + i - 1] : 0.0;
        buffer[i] = {(x - config.pre_emphasis * prev) * window[i], 0.0};
      } else {
        buffer[i] = {0.0, 0.0};
      }
    }
    fft(buffer);
    std::fill(filter_energy.begin(), filter_energy.end(), 0.0);
    for (std::size_t m = 0; m < filters; ++m) {
      double left = edges[m], center = edges[m + 1], right = edges[m + 2];
      std::size_t b0 = static_cast<std::size_t>(std::ceil(left));
      std::size_t b1 = std::min(bins - 1,
                                static_cast<std::size_t>(std::floor(right)));
      for (std::size_t b = b0; b <= b1; ++b) {
        double x = static_cast<double>(b);
        double weight = 0.0;
        if (x >= left && x <= center && center > left) {
          weight = (x - left) / (center - left);
        } else if (x > center && x <= right && right > center) {
          weight = (right - x) / (right - center);
        }
        if (weight <= 0.0) continue;
        double power = std::norm(buffer[b]) / static_cast<double>(fft_size);
        filter_energy[m] += weight * power;
      }
    }
    // Log with a floor, then DCT-II to cepstra.
    for (std::size_t m = 0; m < filters; ++m) {
      filter_energy[m] = std::log(std::max(filter_energy[m], 1e-10));
    }
    for (std::size_t k = 0; k < cepstra; ++k) {
      double acc = 0.0;
      for (std::size_t m = 0; m < filters; ++m) {
        acc += filter_energy[m] *
               std::cos(std::numbers::pi * static_cast<double>(k) *
                        (static_cast<double>(m) + 0.5) /
                        static_cast<double>(filters));
      }
      static_coeffs[k][f] = acc;
    }
  }

  for (std::size_t k = 0; k < cepstra; ++k) {
    std::vector<double> delta = delta_column(static_coeffs[k]);
    std::vector<double> delta2 = delta_column(delta);
    for (std::size_t f = 0; f < frames; ++f) {
      features.at(f, k) = static_coeffs[k][f];
      features.at(f, cepstra + k) = delta[f];
      features.at(f, 2 * cepstra + k) = delta2[f];
    }
  }
  return features;
}

// ---------------------------------------------------------------------------
// K-means
// ---------------------------------------------------------------------------

namespace {

double sq_distance(const Tensor& rows, std::size_t r, const Tensor& centroids,
                   std::size_t c) {
  double acc = 0.0;
  std::size_t dim = rows.cols();
  const double* a = rows.data().data() + r * dim;
  const double* b = centroids.data().data() + c * dim;
  for (std::size_t j = 0; j < dim; ++j) {
    double d = a[j] - b[j];
    acc += d * d;
  }
  return acc;
}

std::size_t count_distinct_rows(const Tensor& rows) {
  std::set<std::vector<double>> seen;
  std::size_t dim = rows.cols();
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    seen.insert(std::vector<double>(rows.data().begin() + r * dim,
                                    rows.data().begin() + (r + 1) * dim));
  }
  return seen.size();
}

}  // namespace

double kmeans_inertia(const Tensor& rows, const Codebook& codebook) {
  double total = 0.0;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < codebook.classes(); ++c) {
      best = std::min(best, sq_distance(rows, r, codebook.centroids, c));
    }
    total += best;
  }
  return total;
}

Codebook kmeans_fit(const Tensor& rows, std::size_t classes,
                    std::size_t iterations, Rng& rng,
                    std::vector<double>* inertia_history) {
  if (rows.ndim() != 2 || rows.rows() == 0) {
    throw ShapeError("kmeans_fit: rows must be a non-empty [N, dim] matrix");
  }
  std::size_t n = rows.rows(), dim = rows.cols();
  if (classes < 1) throw Error("kmeans_fit: need at least one class");
  if (n < classes) {
    throw Error("kmeans_fit: " + std::to_string(n) + " rows is fewer than " +
                std::to_string(classes) + " classes");
  }
  if (count_distinct_rows(rows) < classes) {
    throw Error("kmeans_fit: fewer distinct rows than classes");
  }

  // k-means++ seeding: first centroid uniform, then squared-distance weighted.
  Codebook book;
  book.centroids = Tensor({classes, dim});
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.uniform_index(n);
  for (std::size_t j = 0; j < dim; ++j) {
    book.centroids.at(0, j) = rows.at(first, j);
  }
  for (std::size_t c = 1; c < classes; ++c) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      dist2[r] = std::min(dist2[r], sq_distance(rows, r, book.centroids, c - 1));
      total += dist2[r];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double draw = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t r = 0; r < n; ++r) {
        acc += dist2[r];
        if (draw < acc) {
          pick = r;
          break;
        }
      }
    } else {
      // All remaining mass is zero; distinct-row precondition makes this
      // unreachable, but keep the seeding defined.
      pick = rng.uniform_index(n);
    }
    for (std::size_t j = 0; j < dim; ++j) {
      book.centroids.at(c, j) = rows.at(pick, j);
    }
  }

  std::vector<int> assignment(n, -1);
  double previous_inertia = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < iterations; ++it) {
    // Assignment step.
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double best = std::numeric_limits<double>::infinity();
      int best_c = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        double d = sq_distance(rows, r, book.centroids, c);
        if (d < best) {
          best = d;
          best_c = static_cast<int>(c);
        }
      }
      if (assignment[r] != best_c) changed = true;
      assignment[r] = best_c;
      inertia += best;
    }
    if (inertia > previous_inertia * (1.0 + 1e-9) + 1e-12) {
      throw Error("kmeans_fit: inertia increased between iterations");
    }
    previous_inertia = inertia;
    if (inertia_history) inertia_history->push_back(inertia);

    // Update step.
    std::vector<std::size_t> counts(classes, 0);
    Tensor sums({classes, dim});
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t c = static_cast<std::size_t>(assignment[r]);
      counts[c] += 1;
      for (std::size_t j = 0; j < dim; ++j) sums.at(c, j) += rows.at(r, j);
    }
    for (std::size_t c = 0; c < classes; ++c) {
      if (counts[c] > 0) {
        for (std::size_t j = 0; j < dim; ++j) {
          book.centroids.at(c, j) = sums.at(c, j) / static_cast<double>(counts[c]);
        }
      } else {
        // Re-seed an empty cluster to the point farthest from its centroid.
        double worst = -1.0;
        std::size_t pick = 0;
        for (std::size_t r = 0; r < n; ++r) {
          double d = sq_distance(rows, r, book.centroids,
                                 static_cast<std::size_t>(assignment[r]));
          if (d > worst) {
            worst = d;
            pick = r;
          }
        }
        for (std::size_t j = 0; j < dim; ++j) {
          book.centroids.at(c, j) = rows.at(pick, j);
        }
        // The monotonicity guarantee restarts after a re-seed.
        previous_inertia = std::numeric_limits<double>::infinity();
      }
    }
    if (!changed && it > 0) break;
  }
  return book;
}

namespace {

std::map<std::string, std::vector<int>> cluster_and_assign(
    const std::vector<std::pair<std::string, Tensor>>& states,
    std::size_t classes, std::size_t iterations, Rng& rng,
    Codebook* codebook_out) {
  std::size_t total_frames = 0;
  for (const auto& [id, rows] : states) total_frames += rows.rows();
  std::size_t dim = states.front().second.cols();
  Tensor pooled({total_frames, dim});
  std::size_t cursor = 0;
  for (const auto& [id, rows] : states) {
    std::copy(rows.data().begin(), rows.data().end(),
              pooled.data().begin() + cursor * dim);
    cursor += rows.rows();
  }
  Codebook book = kmeans_fit(pooled, classes, iterations, rng);
  std::map<std::string, std::vector<int>> labels;
  for (const auto& [id, rows] : states) {
    labels[id] = assign_labels(rows, book);
  }
  if (codebook_out) *codebook_out = std::move(book);
  return labels;
}

}  // namespace

std::map<std::string, std::vector<int>> label_manifest(
    const Manifest& manifest, std::size_t classes, std::size_t iterations,
    Rng& rng, Codebook* codebook_out) {
  if (manifest.items.empty()) {
    throw Error("label_manifest: manifest is empty");
  }
  std::vector<std::pair<std::string, Tensor>> states;
  for (const Utterance& utt : manifest.items) {
    states.emplace_back(utt.id, load_features(manifest.resolve(utt)));
  }
  return cluster_and_assign(states, classes, iterations, rng, codebook_out);
}

std::map<std::string, std::vector<int>> relabel_from_hidden(
    const Model& model, const Manifest& manifest, long layer_index,
    std::size_t classes, std::size_t iterations, Rng& rng,
    Codebook* codebook_out) {
  if (manifest.items.empty()) {
    throw Error("relabel_from_hidden: manifest is empty");
  }
  std::size_t layer = layer_index < 0
                          ? model.private_out_index(Modality::kSpeech)
                          : static_cast<std::size_t>(layer_index);

  std::vector<std::pair<std::string, Tensor>> states;
  for (const Utterance& utt : manifest.items) {
    Tensor features = load_features(manifest.resolve(utt));
    HiddenStates hidden =
        model.encode(model.embed_speech_values(features), Modality::kSpeech);
    if (layer >= hidden.per_layer.size()) {
      throw Error("relabel_from_hidden: layer " + std::to_string(layer) +
                  " out of range (captured " +
                  std::to_string(hidden.per_layer.size()) + " layers)");
    }
    states.emplace_back(utt.id, hidden.per_layer[layer]);
  }
  return cluster_and_assign(states, classes, iterations, rng, codebook_out);
}

std::vector<int> assign_labels(const Tensor& rows, const Codebook& codebook) {
  if (rows.cols() != codebook.dim()) {
    throw ShapeError("assign_labels: feature dim " +
                     std::to_string(rows.cols()) +
                     " does not match centroid dim " +
                     std::to_string(codebook.dim()));
  }
  std::vector<int> labels(rows.rows(), 0);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    int best_c = 0;
    for (std::size_t c = 0; c < codebook.classes(); ++c) {
      double d = sq_distance(rows, r, codebook.centroids, c);
      if (d < best) {
        best = d;
        best_c = static_cast<int>(c);
      }
    }
    labels[r] = best_c;
  }
  return labels;
}

}  // namespace speechtext

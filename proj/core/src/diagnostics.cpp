// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "speechtext/common.hpp"

namespace speechtext {

namespace {

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Cyclic Jacobi eigensolver for a small symmetric matrix. Returns
// eigenvalues with eigenvectors in the columns of `vectors`.
void jacobi_eig(Tensor a, std::vector<double>& values, Tensor& vectors) {
  std::size_t n = a.rows();
  vectors = Tensor({n, n});
  for (std::size_t i = 0; i < n; ++i) vectors.at(i, i) = 1.0;
  for (std::size_t sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    }
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a.at(p, q)) < 1e-300) continue;
        double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * a.at(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = vectors.at(k, p), vkq = vectors.at(k, q);
          vectors.at(k, p) = c * vkp - s * vkq;
          vectors.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a.at(i, i);
}

Tensor row_covariance(const Tensor& states) {
  std::size_t n = states.rows(), d = states.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += states.at(r, c);
  }
  for (double& m : mean) m /= static_cast<double>(n);
  Tensor cov({d, d});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      double di = states.at(r, i) - mean[i];
      for (std::size_t j = i; j < d; ++j) {
        cov.at(i, j) += di * (states.at(r, j) - mean[j]);
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov.at(i, j) /= static_cast<double>(n);
      cov.at(j, i) = cov.at(i, j);
    }
  }
  return cov;
}

}  // namespace

HeatMap similarity_heatmap(const Tensor& h_speech, const Tensor& h_text,
                           std::size_t layer_index, std::string utterance_id) {
  if (h_speech.ndim() != 2 || h_text.ndim() != 2 ||
      h_speech.cols() != h_text.cols()) {
    throw ShapeError("similarity_heatmap: state width mismatch");
  }
  std::size_t ts = h_speech.rows(), tt = h_text.rows(), d = h_speech.cols();
  auto row_norm = [d](const Tensor& m, std::size_t r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += m.at(r, c) * m.at(r, c);
    return std::sqrt(acc);
  };
  std::vector<double> ns(ts), nt(tt);
  for (std::size_t i = 0; i < ts; ++i) ns[i] = row_norm(h_speech, i);
  for (std::size_t j = 0; j < tt; ++j) nt[j] = row_norm(h_text, j);

  HeatMap map;
  map.layer_index = layer_index;
  map.utterance_id = std::move(utterance_id);
  map.matrix = Tensor({ts, tt});
  for (std::size_t i = 0; i < ts; ++i) {
    for (std::size_t j = 0; j < tt; ++j) {
      if (ns[i] == 0.0 || nt[j] == 0.0) continue;  // defined as 0
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += h_speech.at(i, c) * h_text.at(j, c);
      map.matrix.at(i, j) = dot / (ns[i] * nt[j]);
    }
  }
  return map;
}

Tensor bilinear_resize(const Tensor& map, std::size_t rows, std::size_t cols) {
  if (map.ndim() != 2 || rows == 0 || cols == 0) {
    throw ShapeError("bilinear_resize: bad target shape");
  }
  std::size_t sr = map.rows(), sc = map.cols();
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    double y = rows > 1 ? static_cast<double>(i) * (sr - 1) / (rows - 1) : 0.0;
    std::size_t y0 = static_cast<std::size_t>(y);
    std::size_t y1 = std::min(y0 + 1, sr - 1);
    double fy = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < cols; ++j) {
      double x = cols > 1 ? static_cast<double>(j) * (sc - 1) / (cols - 1) : 0.0;
      std::size_t x0 = static_cast<std::size_t>(x);
      std::size_t x1 = std::min(x0 + 1, sc - 1);
      double fx = x - static_cast<double>(x0);
      double top = map.at(y0, x0) * (1.0 - fx) + map.at(y0, x1) * fx;
      double bottom = map.at(y1, x0) * (1.0 - fx) + map.at(y1, x1) * fx;
      out.at(i, j) = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

Tensor aggregate_heatmaps(std::span<const HeatMap> maps, std::size_t rows,
                          std::size_t cols) {
  if (maps.empty()) throw Error("aggregate_heatmaps: need at least one map");
  Tensor acc({rows, cols});
  for (const HeatMap& map : maps) {
    Tensor resized = bilinear_resize(map.matrix, rows, cols);
    double lo = resized.data()[0], hi = resized.data()[0];
    for (double v : resized.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    double range = hi - lo;
    for (std::size_t k = 0; k < resized.numel(); ++k) {
      double normalized = range > 0.0 ? (resized.at(k) - lo) / range : 0.5;
      acc.at(k) += normalized;
    }
  }
  for (std::size_t k = 0; k < acc.numel(); ++k) {
    acc.at(k) /= static_cast<double>(maps.size());
  }
  return acc;
}

double diagonal_dominance(const Tensor& map, double band) {
  if (band <= 0.0 || band >= 1.0) {
    throw ConfigError("diagonal_dominance: band must lie in (0, 1)");
  }
  std::size_t rows = map.rows(), cols = map.cols();
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t in_count = 0, out_count = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double rel = static_cast<double>(i) / static_cast<double>(rows) -
                   static_cast<double>(j) / static_cast<double>(cols);
      if (std::abs(rel) < band) {
        in_sum += map.at(i, j);
        ++in_count;
      } else {
        out_sum += map.at(i, j);
        ++out_count;
      }
    }
  }
  double in_mean = in_count ? in_sum / static_cast<double>(in_count) : 0.0;
  double out_mean = out_count ? out_sum / static_cast<double>(out_count) : 0.0;
  return in_mean - out_mean;
}

std::vector<std::array<double, 2>> project_2d(const Tensor& states) {
  if (states.ndim() != 2 || states.rows() < 3) {
    throw Error("project_2d: need at least 3 rows");
  }
  std::size_t n = states.rows(), d = states.cols();
  Tensor cov = row_covariance(states);
  std::vector<double> values;
  Tensor vectors;
  jacobi_eig(cov, values, vectors);

  // Two largest eigenpairs.
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  std::array<std::vector<double>, 2> components;
  for (int k = 0; k < 2; ++k) {
    std::size_t col = order[std::min<std::size_t>(k, d - 1)];
    components[k].resize(d);
    double peak = 0.0;
    std::size_t peak_i = 0;
    for (std::size_t i = 0; i < d; ++i) {
      components[k][i] = vectors.at(i, col);
      if (std::abs(components[k][i]) > peak) {
        peak = std::abs(components[k][i]);
        peak_i = i;
      }
    }
    if (components[k][peak_i] < 0.0) {
      for (double& v : components[k]) v = -v;
    }
  }

  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += states.at(r, c);
  }
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<std::array<double, 2>> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (int k = 0; k < 2; ++k) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        acc += (states.at(r, c) - mean[c]) * components[k][c];
      }
      out[r][k] = acc;
    }
  }
  return out;
}

std::vector<double> covariance_spectrum(const Tensor& states) {
  Tensor cov = row_covariance(states);
  std::vector<double> values;
  Tensor vectors;
  jacobi_eig(cov, values, vectors);
  std::sort(values.begin(), values.end(), std::greater<double>());
  return values;
}

void write_csv(const std::string& path, const Tensor& matrix) {
  std::ofstream out(path);
  if (!out) throw IoError("write_csv: cannot write " + path);
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    for (std::size_t c = 0; c < matrix.cols(); ++c) {
      if (c) out << ',';
      out << format_double(matrix.at(r, c));
    }
    out << '\n';
  }
}

void write_pgm(const std::string& path, const Tensor& matrix) {
  std::ofstream out(path);
  if (!out) throw IoError("write_pgm: cannot write " + path);
  double lo = matrix.data()[0], hi = matrix.data()[0];
  for (double v : matrix.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double range = hi - lo;
  out << "P2\n" << matrix.cols() << ' ' << matrix.rows() << "\n255\n";
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    for (std::size_t c = 0; c < matrix.cols(); ++c) {
      int level = range > 0.0 ? static_cast<int>(
                                    std::lround((matrix.at(r, c) - lo) / range * 255.0))
                              : 128;
      if (c) out << ' ';
      out << level;
    }
    out << '\n';
  }
}

}  // namespace speechtext

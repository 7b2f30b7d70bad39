// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "speechtext/common.hpp"

namespace speechtext {

namespace {

// Row-normalize to unit L2 length. The tiny epsilon only guards the exact
// zero row; it perturbs well-scaled rows far below every test tolerance.
NodeRef rows_unit_norm(Graph& graph, NodeRef x) {
  NodeRef sq = graph.row_sum(graph.mul(x, x));
  NodeRef norm = graph.sqrt(graph.add(sq, graph.constant(Tensor::scalar(1e-24))));
  return graph.div(x, norm);
}

Tensor one_hot(std::span<const int> ids, std::size_t classes) {
  Tensor out({ids.size(), classes});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.at(i, static_cast<std::size_t>(ids[i])) = 1.0;
  }
  return out;
}

}  // namespace

bool LossBundle::finite() const {
  return std::isfinite(hubert) && std::isfinite(mlm) && std::isfinite(ctc) &&
         std::isfinite(ce_align);
}

HubertLossResult hubert_loss(Graph& graph, NodeRef h_shared,
                             std::span<const int> labels,
                             std::span<const std::size_t> mask,
                             const HubertHeadRefs& head,
                             std::size_t codeword_count) {
  std::size_t frames = graph.value(h_shared).rows();
  if (labels.size() != frames) {
    throw ShapeError("hubert_loss: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(frames) + " frames");
  }
  std::vector<int> picked;
  std::vector<std::size_t> rows;
  for (std::size_t t : mask) {
    if (t >= frames) throw Error("hubert_loss: mask index out of range");
    int label = labels[t];
    if (label < 0 || static_cast<std::size_t>(label) >= codeword_count) {
      throw Error("hubert_loss: label " + std::to_string(label) +
                  " outside [0, " + std::to_string(codeword_count) + ")");
    }
    picked.push_back(label);
    rows.push_back(t);
  }
  HubertLossResult result;
  result.count = rows.size();
  if (rows.empty()) {
    result.loss = graph.constant(Tensor::scalar(0.0));
    return result;
  }

  NodeRef h_masked = graph.gather_rows(h_shared, rows);
  NodeRef projected = rows_unit_norm(graph, graph.matmul(h_masked, head.projection));
  NodeRef codewords = rows_unit_norm(graph, head.codewords);
  NodeRef logits = graph.scale(graph.matmul(projected, graph.transpose(codewords)),
                               1.0 / head.temperature);
  result.probs = graph.softmax(logits);
  NodeRef logp = graph.sub(logits, graph.logsumexp_rows(logits));
  NodeRef target = graph.constant(one_hot(picked, codeword_count));
  result.loss = graph.scale(graph.sum_all(graph.mul(logp, target)),
                            -1.0 / static_cast<double>(rows.size()));
  return result;
}

NodeRef mlm_loss(Graph& graph, NodeRef h_shared, std::span<const int> targets,
                 std::span<const std::size_t> mask, NodeRef head_w,
                 NodeRef head_b, std::size_t vocab) {
  std::size_t frames = graph.value(h_shared).rows();
  if (targets.size() != frames) {
    throw ShapeError("mlm_loss: target length mismatch");
  }
  std::vector<int> picked;
  std::vector<std::size_t> rows;
  for (std::size_t t : mask) {
    if (t >= frames) throw Error("mlm_loss: mask index out of range");
    int target = targets[t];
    if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
      throw Error("mlm_loss: target " + std::to_string(target) +
                  " outside the vocabulary");
    }
    picked.push_back(target);
    rows.push_back(t);
  }
  if (rows.empty()) return graph.constant(Tensor::scalar(0.0));

  NodeRef h_masked = graph.gather_rows(h_shared, rows);
  NodeRef logits = graph.add(graph.matmul(h_masked, head_w), head_b);
  NodeRef logp = graph.sub(logits, graph.logsumexp_rows(logits));
  NodeRef target = graph.constant(one_hot(picked, vocab));
  return graph.scale(graph.sum_all(graph.mul(logp, target)),
                     -1.0 / static_cast<double>(rows.size()));
}

NodeRef ctc_loss(Graph& graph, NodeRef logits, std::span<const int> targets) {
  return graph.ctc(logits, std::vector<int>(targets.begin(), targets.end()));
}

double ctc_brute_force(const Tensor& probs, std::span<const int> targets) {
  if (probs.ndim() != 2) throw ShapeError("ctc_brute_force: probs must be [T, V]");
  std::size_t frames = probs.rows(), vocab = probs.cols();
  if (frames > 8 || vocab > 4) {
    throw Error("ctc_brute_force: instance exceeds the tractability bound");
  }
  for (int y : targets) {
    if (y < 1 || static_cast<std::size_t>(y) >= vocab) {
      throw Error("ctc_brute_force: target outside the vocabulary");
    }
  }
  double total = 0.0;
  std::vector<int> path(frames, 0);
  while (true) {
    double p = 1.0;
    for (std::size_t t = 0; t < frames; ++t) p *= probs.at(t, path[t]);
    std::vector<int> collapsed;
    int prev = -1;
    for (int s : path) {
      if (s != 0 && s != prev) collapsed.push_back(s);
      prev = s;
    }
    if (collapsed.size() == targets.size() &&
        std::equal(collapsed.begin(), collapsed.end(), targets.begin())) {
      total += p;
    }
    std::size_t pos = 0;
    while (pos < frames && ++path[pos] == static_cast<int>(vocab)) {
      path[pos] = 0;
      ++pos;
    }
    if (pos == frames) break;
  }
  if (total <= 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(total);
}

NodeRef ce_alignment_loss(Graph& graph, NodeRef h_speech, NodeRef h_text,
                          std::span<const std::size_t> unmasked) {
  const Tensor& s = graph.value(h_speech);
  const Tensor& t = graph.value(h_text);
  if (!s.same_shape(t)) {
    throw ShapeError("ce_alignment_loss: state shapes differ");
  }
  std::vector<std::size_t> rows;
  for (std::size_t i : unmasked) {
    if (i >= s.rows()) throw Error("ce_alignment_loss: index out of range");
    rows.push_back(i);
  }
  if (rows.empty()) return graph.constant(Tensor::scalar(0.0));

  NodeRef speech_rows = graph.gather_rows(h_speech, rows);
  NodeRef text_rows = graph.gather_rows(h_text, rows);
  NodeRef target = graph.softmax(text_rows);
  NodeRef logq = graph.sub(speech_rows, graph.logsumexp_rows(speech_rows));
  return graph.scale(graph.sum_all(graph.mul(target, logq)),
                     -1.0 / static_cast<double>(rows.size()));
}

}  // namespace speechtext

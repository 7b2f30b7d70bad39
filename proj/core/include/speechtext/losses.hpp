// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "speechtext/encoder.hpp"
#include "speechtext/graph.hpp"
#include "speechtext/tensor.hpp"

namespace speechtext {

// Per-step loss components. A loss with zero contributing positions stays at
// zero rather than turning into NaN.
struct LossBundle {
  double hubert = 0.0;
  double mlm = 0.0;
  double ctc = 0.0;
  double ce_align = 0.0;
  std::size_t hubert_count = 0;
  std::size_t mlm_count = 0;
  std::size_t ctc_count = 0;
  std::size_t ce_count = 0;

  double total() const { return hubert + mlm + ctc + ce_align; }
  bool finite() const;
};

struct HubertLossResult {
  NodeRef loss;
  NodeRef probs;  // [masked, C] codeword probabilities; invalid when count 0
  std::size_t count = 0;
};

// Masked codeword prediction: p(c | h_t) is the softmax over temperature
// scaled cosine similarities between the projected state and each codeword
// embedding; the loss is the mean negative log probability of the target
// codeword over the masked positions only.
HubertLossResult hubert_loss(Graph& graph, NodeRef h_shared,
                             std::span<const int> labels,
                             std::span<const std::size_t> mask,
                             const HubertHeadRefs& head,
                             std::size_t codeword_count);

// Cross entropy over the phoneme vocabulary, averaged over the masked
// positions only. `logits_fn` output comes from the phoneme head.
NodeRef mlm_loss(Graph& graph, NodeRef h_shared,
                 std::span<const int> targets,
                 std::span<const std::size_t> mask, NodeRef head_w,
                 NodeRef head_b, std::size_t vocab);

// CTC over character logits [T, V] with blank 0; log-space forward-backward
// inside the graph node. An infeasible target yields +infinity with zero
// gradient.
NodeRef ctc_loss(Graph& graph, NodeRef logits, std::span<const int> targets);

// Oracle for ctc_loss: explicit sum over all vocab^T paths whose collapse
// equals the target. Bounded to T <= 8 and vocab <= 4. `probs` holds real
// per-frame probabilities. Returns +infinity for an impossible target.
double ctc_brute_force(const Tensor& probs, std::span<const int> targets);

// Cross entropy between softmax-normalized speech and text states at the
// unmasked positions, text as the target distribution, averaged.
NodeRef ce_alignment_loss(Graph& graph, NodeRef h_speech, NodeRef h_text,
                          std::span<const std::size_t> unmasked);

}  // namespace speechtext

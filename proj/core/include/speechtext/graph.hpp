// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "speechtext/tensor.hpp"

namespace speechtext {

// Handle to a node in a Graph.
struct NodeRef {
  int index = -1;
  bool valid() const { return index >= 0; }
};

enum class OpKind {
  kInput,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kMatmul,
  kTranspose,
  kReshape,
  kConcat,
  kSlice,
  kGatherRows,
  kRowSelect,
  kSoftmax,
  kLogSumExpRows,
  kRowSum,
  kLayerNorm,
  kGelu,
  kSqrt,
  kLog,
  kExp,
  kSumAll,
  kConv1dGrouped,
  kCtcLoss,
};

// Reverse-mode compute graph over dense tensors. Building an op validates
// shapes immediately and appends a node, so node order is always a valid
// topological order. The graph can be re-evaluated after mutating leaf
// values, which is what the finite difference checker relies on.
//
// Graphs are single-threaded; independent graphs may be evaluated from
// different threads.
class Graph {
 public:
  Graph() = default;

  // Leaves. Inputs carry a name and may require gradients; constants never do.
  NodeRef input(std::string name, Tensor value);
  NodeRef constant(Tensor value);

  // Elementwise binary ops with rank-2 broadcasting: each of the two viewed
  // dims must match or be 1 (scalars, row vectors, column vectors broadcast).
  NodeRef add(NodeRef a, NodeRef b);
  NodeRef sub(NodeRef a, NodeRef b);
  NodeRef mul(NodeRef a, NodeRef b);
  NodeRef div(NodeRef a, NodeRef b);

  NodeRef scale(NodeRef a, double factor);
  NodeRef matmul(NodeRef a, NodeRef b);
  NodeRef transpose(NodeRef a);
  NodeRef reshape(NodeRef a, std::vector<std::size_t> dims);
  // axis 0 stacks rows, axis 1 stacks columns.
  NodeRef concat(NodeRef a, NodeRef b, int axis);
  // Block slice [r0, r1) x [c0, c1) of a rank-2 node.
  NodeRef slice(NodeRef a, std::size_t r0, std::size_t r1, std::size_t c0,
                std::size_t c1);
  NodeRef gather_rows(NodeRef a, std::vector<std::size_t> indices);
  // out[r] = b[r] for r in rows_from_b, a[r] otherwise. Exact copy, no
  // arithmetic touches the pass-through rows.
  NodeRef row_select(NodeRef a, NodeRef b, std::vector<std::size_t> rows_from_b);

  // Row-wise ops (a vector is treated as a single row).
  NodeRef softmax(NodeRef a);
  NodeRef logsumexp_rows(NodeRef a);  // [r, c] -> [r, 1]
  NodeRef row_sum(NodeRef a);         // [r, c] -> [r, 1]
  NodeRef layer_norm(NodeRef a, double eps = 1e-5);

  // Elementwise unary ops.
  NodeRef gelu(NodeRef a);
  NodeRef sqrt(NodeRef a);
  NodeRef log(NodeRef a);
  NodeRef exp(NodeRef a);

  NodeRef sum_all(NodeRef a);  // -> scalar

  // Grouped 1-D convolution over time. x is [T, d], weight is
  // [d, kernel * (d / groups)] laid out as [out][tap][in-within-group],
  // bias is [d]. Same padding, output is [T, d].
  NodeRef conv1d_grouped(NodeRef x, NodeRef weight, NodeRef bias,
                         std::size_t kernel, std::size_t groups);

  // CTC loss over logits [T, V] with blank at index 0. Targets hold ids in
  // [1, V). Log-softmax and the forward-backward recursion run in log space
  // inside the node. An infeasible target (T too short) yields +infinity
  // with zero gradient rather than NaN.
  NodeRef ctc(NodeRef logits, std::vector<int> targets);

  // Evaluate every node in order. Pure: identical leaf values produce bit
  // identical outputs.
  void forward();

  // Reverse sweep from a scalar loss node; forward() must have run.
  // Gradients accumulate over fan-out.
  void backward(NodeRef loss);

  const Tensor& value(NodeRef ref) const;
  const Tensor& grad(NodeRef ref) const;

  // Mutable access to a leaf's value for rebinding or finite differences.
  Tensor& input_value(NodeRef ref);
  NodeRef find_input(const std::string& name) const;
  std::vector<std::pair<std::string, NodeRef>> inputs() const;

  std::size_t size() const { return nodes_.size(); }
  OpKind op_kind(NodeRef ref) const;

 private:
  struct Node {
    OpKind op;
    std::vector<int> args;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::string name;  // inputs only

    double scalar = 0.0;  // kScale factor, kLayerNorm eps
    int axis = 0;
    std::size_t r0 = 0, r1 = 0, c0 = 0, c1 = 0;
    std::vector<std::size_t> indices;  // kGatherRows, kRowSelect
    std::vector<std::size_t> dims;     // kReshape

    std::size_t kernel = 0, groups = 0, pad_left = 0, pad_right = 0;

    std::vector<int> targets;  // kCtcLoss
    Tensor ctc_softmax;        // scratch filled by forward
    Tensor ctc_posterior;
    bool ctc_feasible = true;
  };

  NodeRef push(Node node);
  const Node& node(NodeRef ref) const;
  Node& node(NodeRef ref);
  void eval_node(std::size_t i);
  void backprop_node(std::size_t i);

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> input_index_;
  bool evaluated_ = false;
};

// Finite difference gradient report for every grad-requiring input of a
// graph. Relative error is |analytic - numeric| / max(|analytic|, |numeric|,
// 1e-8), central differences with the given epsilon.
struct FiniteDiffEntry {
  std::string input;
  double max_rel_error = 0.0;
};

struct FiniteDiffReport {
  double epsilon = 0.0;
  double tolerance = 0.0;
  std::vector<FiniteDiffEntry> entries;

  double max_rel_error() const;
  bool passed() const;
  std::vector<std::string> failures() const;
};

FiniteDiffReport finite_diff_check(Graph& graph, NodeRef loss,
                                   double epsilon = 1e-4,
                                   double tolerance = 1e-3);

// log(exp(a) + exp(b)) without overflow; -inf is an identity element.
double log_add(double a, double b);

}  // namespace speechtext

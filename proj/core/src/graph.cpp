// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "speechtext/common.hpp"

namespace speechtext {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape().size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape()[i]);
  }
  return s + "]";
}

// Viewed rank-2 dims for broadcasting: a vector is one row, a scalar is 1x1.
void view2d(const Tensor& t, std::size_t& r, std::size_t& c) {
  r = t.rows();
  c = t.cols();
}

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_derivative(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

NodeRef Graph::push(Node n) {
  for (int arg : n.args) {
    if (arg < 0 || static_cast<std::size_t>(arg) >= nodes_.size()) {
      throw Error("Graph: op references an invalid node");
    }
    n.requires_grad = n.requires_grad || nodes_[arg].requires_grad;
  }
  nodes_.push_back(std::move(n));
  evaluated_ = false;
  return NodeRef{static_cast<int>(nodes_.size()) - 1};
}

const Graph::Node& Graph::node(NodeRef ref) const {
  if (!ref.valid() || static_cast<std::size_t>(ref.index) >= nodes_.size()) {
    throw Error("Graph: invalid node reference");
  }
  return nodes_[ref.index];
}

Graph::Node& Graph::node(NodeRef ref) {
  return const_cast<Node&>(static_cast<const Graph*>(this)->node(ref));
}

NodeRef Graph::input(std::string name, Tensor value) {
  Node n;
  n.op = OpKind::kInput;
  n.requires_grad = value.requires_grad;
  n.name = name;
  n.value = std::move(value);
  NodeRef ref = push(std::move(n));
  input_index_.emplace_back(std::move(name), ref.index);
  return ref;
}

NodeRef Graph::constant(Tensor value) {
  Node n;
  n.op = OpKind::kConstant;
  n.value = std::move(value);
  n.value.requires_grad = false;
  return push(std::move(n));
}

NodeRef Graph::add(NodeRef a, NodeRef b) {
  Node n;
  n.op = OpKind::kAdd;
  n.args = {a.index, b.index};
  std::size_t ra, ca, rb, cb;
  view2d(node(a).value, ra, ca);
  view2d(node(b).value, rb, cb);
  if ((ra != rb && ra != 1 && rb != 1) || (ca != cb && ca != 1 && cb != 1)) {
    throw ShapeError("add(node " + std::to_string(nodes_.size()) +
                     "): cannot broadcast " + shape_str(node(a).value) +
                     " with " + shape_str(node(b).value));
  }
  std::size_t r = std::max(ra, rb), c = std::max(ca, cb);
  std::size_t nd = std::max(node(a).value.ndim(), node(b).value.ndim());
  n.value = nd >= 2 ? Tensor({r, c}) : Tensor({c});
  return push(std::move(n));
}

NodeRef Graph::sub(NodeRef a, NodeRef b) {
  NodeRef out = add(a, b);
  nodes_[out.index].op = OpKind::kSub;
  return out;
}

NodeRef Graph::mul(NodeRef a, NodeRef b) {
  NodeRef out = add(a, b);
  nodes_[out.index].op = OpKind::kMul;
  return out;
}

NodeRef Graph::div(NodeRef a, NodeRef b) {
  NodeRef out = add(a, b);
  nodes_[out.index].op = OpKind::kDiv;
  return out;
}

NodeRef Graph::scale(NodeRef a, double factor) {
  Node n;
  n.op = OpKind::kScale;
  n.args = {a.index};
  n.scalar = factor;
  n.value = Tensor(node(a).value.shape());
  return push(std::move(n));
}

NodeRef Graph::matmul(NodeRef a, NodeRef b) {
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  if (ta.ndim() != 2 || tb.ndim() != 2 || ta.cols() != tb.rows()) {
    throw ShapeError("matmul(node " + std::to_string(nodes_.size()) + "): " +
                     shape_str(ta) + " x " + shape_str(tb));
  }
  Node n;
  n.op = OpKind::kMatmul;
  n.args = {a.index, b.index};
  n.value = Tensor({ta.rows(), tb.cols()});
  return push(std::move(n));
}

NodeRef Graph::transpose(NodeRef a) {
  const Tensor& t = node(a).value;
  if (t.ndim() != 2) {
    throw ShapeError("transpose(node " + std::to_string(nodes_.size()) +
                     "): needs rank 2, got " + shape_str(t));
  }
  Node n;
  n.op = OpKind::kTranspose;
  n.args = {a.index};
  n.value = Tensor({t.cols(), t.rows()});
  return push(std::move(n));
}

NodeRef Graph::reshape(NodeRef a, std::vector<std::size_t> dims) {
  std::size_t prod = 1;
  for (std::size_t d : dims) prod *= d;
  if (prod != node(a).value.numel()) {
    throw ShapeError("reshape(node " + std::to_string(nodes_.size()) +
                     "): element count mismatch");
  }
  Node n;
  n.op = OpKind::kReshape;
  n.args = {a.index};
  n.dims = dims;
  n.value = Tensor(std::move(dims));
  return push(std::move(n));
}

NodeRef Graph::concat(NodeRef a, NodeRef b, int axis) {
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  if (ta.ndim() != 2 || tb.ndim() != 2 || (axis != 0 && axis != 1)) {
    throw ShapeError("concat(node " + std::to_string(nodes_.size()) +
                     "): needs two rank-2 tensors and axis 0 or 1");
  }
  Node n;
  n.op = OpKind::kConcat;
  n.args = {a.index, b.index};
  n.axis = axis;
  if (axis == 0) {
    if (ta.cols() != tb.cols()) {
      throw ShapeError("concat(node " + std::to_string(nodes_.size()) +
                       "): column mismatch");
    }
    n.value = Tensor({ta.rows() + tb.rows(), ta.cols()});
  } else {
    if (ta.rows() != tb.rows()) {
      throw ShapeError("concat(node " + std::to_string(nodes_.size()) +
                       "): row mismatch");
    }
    n.value = Tensor({ta.rows(), ta.cols() + tb.cols()});
  }
  return push(std::move(n));
}

NodeRef Graph::slice(NodeRef a, std::size_t r0, std::size_t r1, std::size_t c0,
                     std::size_t c1) {
  const Tensor& t = node(a).value;
  if (t.ndim() != 2 || r1 > t.rows() || c1 > t.cols() || r0 >= r1 || c0 >= c1) {
    throw ShapeError("slice(node " + std::to_string(nodes_.size()) +
                     "): bad block on " + shape_str(t));
  }
  Node n;
  n.op = OpKind::kSlice;
  n.args = {a.index};
  n.r0 = r0;
  n.r1 = r1;
  n.c0 = c0;
  n.c1 = c1;
  n.value = Tensor({r1 - r0, c1 - c0});
  return push(std::move(n));
}

NodeRef Graph::gather_rows(NodeRef a, std::vector<std::size_t> indices) {
  const Tensor& t = node(a).value;
  if (t.ndim() != 2) {
    throw ShapeError("gather_rows(node " + std::to_string(nodes_.size()) +
                     "): needs rank 2");
  }
  for (std::size_t idx : indices) {
    if (idx >= t.rows()) {
      throw ShapeError("gather_rows(node " + std::to_string(nodes_.size()) +
                       "): row index " + std::to_string(idx) +
                       " out of range");
    }
  }
  Node n;
  n.op = OpKind::kGatherRows;
  n.args = {a.index};
  n.value = Tensor({indices.size(), t.cols()});
  n.indices = std::move(indices);
  return push(std::move(n));
}

NodeRef Graph::row_select(NodeRef a, NodeRef b,
                          std::vector<std::size_t> rows_from_b) {
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  if (!ta.same_shape(tb) || ta.ndim() != 2) {
    throw ShapeError("row_select(node " + std::to_string(nodes_.size()) +
                     "): operands must share a rank-2 shape");
  }
  for (std::size_t r : rows_from_b) {
    if (r >= ta.rows()) {
      throw ShapeError("row_select(node " + std::to_string(nodes_.size()) +
                       "): row index out of range");
    }
  }
  Node n;
  n.op = OpKind::kRowSelect;
  n.args = {a.index, b.index};
  n.indices = std::move(rows_from_b);
  n.value = Tensor(ta.shape());
  return push(std::move(n));
}

NodeRef Graph::softmax(NodeRef a) {
  Node n;
  n.op = OpKind::kSoftmax;
  n.args = {a.index};
  n.value = Tensor(node(a).value.shape());
  return push(std::move(n));
}

NodeRef Graph::logsumexp_rows(NodeRef a) {
  Node n;
  n.op = OpKind::kLogSumExpRows;
  n.args = {a.index};
  n.value = Tensor({node(a).value.rows(), 1});
  return push(std::move(n));
}

NodeRef Graph::row_sum(NodeRef a) {
  Node n;
  n.op = OpKind::kRowSum;
  n.args = {a.index};
  n.value = Tensor({node(a).value.rows(), 1});
  return push(std::move(n));
}

NodeRef Graph::layer_norm(NodeRef a, double eps) {
  Node n;
  n.op = OpKind::kLayerNorm;
  n.args = {a.index};
  n.scalar = eps;
  n.value = Tensor(node(a).value.shape());
  return push(std::move(n));
}

NodeRef Graph::gelu(NodeRef a) {
  Node n;
  n.op = OpKind::kGelu;
  n.args = {a.index};
  n.value = Tensor(node(a).value.shape());
  return push(std::move(n));
}

NodeRef Graph::sqrt(NodeRef a) {
  Node n;
  n.op = OpKind::kSqrt;
  n.args = {a.index};
  n.value = Tensor(node(a).value.shape());
  return push(std::move(n));
}

NodeRef Graph::log(NodeRef a) {
  Node n;
  n.op = OpKind::kLog;
  n.args = {a.index};
  n.value = Tensor(node(a).value.shape());
  return push(std::move(n));
}

NodeRef Graph::exp(NodeRef a) {
  Node n;
  n.op = OpKind::kExp;
  n.args = {a.index};
  n.value = Tensor(node(a).value.shape());
  return push(std::move(n));
}

NodeRef Graph::sum_all(NodeRef a) {
  Node n;
  n.op = OpKind::kSumAll;
  n.args = {a.index};
  n.value = Tensor({1});
  return push(std::move(n));
}

NodeRef Graph::conv1d_grouped(NodeRef x, NodeRef weight, NodeRef bias,
                              std::size_t kernel, std::size_t groups) {
  const Tensor& tx = node(x).value;
  const Tensor& tw = node(weight).value;
  const Tensor& tb = node(bias).value;
  if (tx.ndim() != 2) {
    throw ShapeError("conv1d(node " + std::to_string(nodes_.size()) +
                     "): input must be rank 2");
  }
  std::size_t channels = tx.cols();
  if (groups == 0 || channels % groups != 0 || kernel == 0) {
    throw ShapeError("conv1d(node " + std::to_string(nodes_.size()) +
                     "): groups must divide channels");
  }
  std::size_t per_group = channels / groups;
  if (tw.rows() != channels || tw.cols() != kernel * per_group ||
      tb.numel() != channels) {
    throw ShapeError("conv1d(node " + std::to_string(nodes_.size()) +
                     "): weight/bias shape mismatch");
  }
  Node n;
  n.op = OpKind::kConv1dGrouped;
  n.args = {x.index, weight.index, bias.index};
  n.kernel = kernel;
  n.groups = groups;
  n.pad_left = (kernel - 1) / 2;
  n.pad_right = kernel / 2;
  n.value = Tensor(tx.shape());
  return push(std::move(n));
}

NodeRef Graph::ctc(NodeRef logits, std::vector<int> targets) {
  const Tensor& t = node(logits).value;
  if (t.ndim() != 2 || t.cols() < 2) {
    throw ShapeError("ctc(node " + std::to_string(nodes_.size()) +
                     "): logits must be [T, V] with V >= 2");
  }
  for (int y : targets) {
    if (y < 1 || static_cast<std::size_t>(y) >= t.cols()) {
      throw Error("ctc(node " + std::to_string(nodes_.size()) +
                  "): target id " + std::to_string(y) + " out of vocabulary");
    }
  }
  Node n;
  n.op = OpKind::kCtcLoss;
  n.args = {logits.index};
  n.targets = std::move(targets);
  n.value = Tensor({1});
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Forward evaluation
// ---------------------------------------------------------------------------

namespace {

// Flat index into the original tensor for a broadcast read at (i, j).
inline std::size_t bcast_at(std::size_t i, std::size_t j, std::size_t r,
                            std::size_t c) {
  return (r == 1 ? 0 : i) * c + (c == 1 ? 0 : j);
}

}  // namespace

void Graph::eval_node(std::size_t i) {
  Node& n = nodes_[i];
  switch (n.op) {
    case OpKind::kInput:
    case OpKind::kConstant:
      return;
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv: {
      const Tensor& a = nodes_[n.args[0]].value;
      const Tensor& b = nodes_[n.args[1]].value;
      std::size_t ra, ca, rb, cb;
      view2d(a, ra, ca);
      view2d(b, rb, cb);
      std::size_t r = std::max(ra, rb), c = std::max(ca, cb);
      for (std::size_t x = 0; x < r; ++x) {
        for (std::size_t y = 0; y < c; ++y) {
          double va = a.at(bcast_at(x, y, ra, ca));
          double vb = b.at(bcast_at(x, y, rb, cb));
          double out;
          switch (n.op) {
            case OpKind::kAdd: out = va + vb; break;
            case OpKind::kSub: out = va - vb; break;
            case OpKind::kMul: out = va * vb; break;
            default: out = va / vb; break;
          }
          n.value.at(x * c + y) = out;
        }
      }
      return;
    }
    case OpKind::kScale: {
      const Tensor& a = nodes_[n.args[0]].value;
      for (std::size_t k = 0; k < a.numel(); ++k) {
        n.value.at(k) = a.at(k) * n.scalar;
      }
      return;
    }
    case OpKind::kMatmul: {
      const Tensor& a = nodes_[n.args[0]].value;
      const Tensor& b = nodes_[n.args[1]].value;
      std::size_t m = a.rows(), kk = a.cols(), p = b.cols();
      std::fill(n.value.data().begin(), n.value.data().end(), 0.0);
      for (std::size_t x = 0; x < m; ++x) {
        for (std::size_t k = 0; k < kk; ++k) {
          double av = a.at(x, k);
          if (av == 0.0) continue;
          const double* brow = b.data().data() + k * p;
          double* orow = n.value.data().data() + x * p;
          for (std::size_t y = 0; y < p; ++y) orow[y] += av * brow[y];
        }
      }
      return;
    }
    case OpKind::kTranspose: {
      const Tensor& a = nodes_[n.args[0]].value;
      for (std::size_t x = 0; x < a.rows(); ++x) {
        for (std::size_t y = 0; y < a.cols(); ++y) {
          n.value.at(y, x) = a.at(x, y);
        }
      }
      return;
    }
    case OpKind::kReshape: {
      n.value.data() = nodes_[n.args[0]].value.data();
      return;
    }
    case OpKind::kConcat: {
      const Tensor& a = nodes_[n.args[0]].value;
      const Tensor& b = nodes_[n.args[1]].value;
      if (n.axis == 0) {
        std::copy(a.data().begin(), a.data().end(), n.value.data().begin());
        std::copy(b.data().begin(), b.data().end(),
                  n.value.data().begin() + a.numel());
      } else {
        for (std::size_t x = 0; x < a.rows(); ++x) {
          for (std::size_t y = 0; y < a.cols(); ++y) n.value.at(x, y) = a.at(x, y);
          for (std::size_t y = 0; y < b.cols(); ++y) {
            n.value.at(x, a.cols() + y) = b.at(x, y);
          }
        }
      }
      return;
    }
    case OpKind::kSlice: {
      const Tensor& a = nodes_[n.args[0]].value;
      for (std::size_t x = n.r0; x < n.r1; ++x) {
        for (std::size_t y = n.c0; y < n.c1; ++y) {
          n.value.at(x - n.r0, y - n.c0) = a.at(x, y);
        }
      }
      return;
    }
    case OpKind::kGatherRows: {
      const Tensor& a = nodes_[n.args[0]].value;
      std::size_t c = a.cols();
      for (std::size_t x = 0; x < n.indices.size(); ++x) {
        const double* src = a.data().data() + n.indices[x] * c;
        std::copy(src, src + c, n.value.data().data() + x * c);
      }
      return;
    }
    case OpKind::kRowSelect: {
      const Tensor& a = nodes_[n.args[0]].value;
      const Tensor& b = nodes_[n.args[1]].value;
      n.value.data() = a.data();
      std::size_t c = a.cols();
      for (std::size_t r : n.indices) {
        std::copy(b.data().begin() + r * c, b.data().begin() + (r + 1) * c,
                  n.value.data().begin() + r * c);
      }
      return;
    }
    case OpKind::kSoftmax: {
      const Tensor& a = nodes_[n.args[0]].value;
      std::size_t r = a.rows(), c = a.cols();
      for (std::size_t x = 0; x < r; ++x) {
        double m = kNegInf;
        for (std::size_t y = 0; y < c; ++y) m = std::max(m, a.at(x * c + y));
        double z = 0.0;
        for (std::size_t y = 0; y < c; ++y) {
          double e = std::exp(a.at(x * c + y) - m);
          n.value.at(x * c + y) = e;
          z += e;
        }
        for (std::size_t y = 0; y < c; ++y) n.value.at(x * c + y) /= z;
      }
      return;
    }
    case OpKind::kLogSumExpRows: {
      const Tensor& a = nodes_[n.args[0]].value;
      std::size_t r = a.rows(), c = a.cols();
      for (std::size_t x = 0; x < r; ++x) {
        double m = kNegInf;
        for (std::size_t y = 0; y < c; ++y) m = std::max(m, a.at(x * c + y));
        double z = 0.0;
        for (std::size_t y = 0; y < c; ++y) z += std::exp(a.at(x * c + y) - m);
        n.value.at(x) = m + std::log(z);
      }
      return;
    }
    case OpKind::kRowSum: {
      const Tensor& a = nodes_[n.args[0]].value;
      std::size_t r = a.rows(), c = a.cols();
      for (std::size_t x = 0; x < r; ++x) {
        double s = 0.0;
        for (std::size_t y = 0; y < c; ++y) s += a.at(x * c + y);
        n.value.at(x) = s;
      }
      return;
    }
    case OpKind::kLayerNorm: {
      const Tensor& a = nodes_[n.args[0]].value;
      std::size_t r = a.rows(), c = a.cols();
      for (std::size_t x = 0; x < r; ++x) {
        double mean = 0.0;
        for (std::size_t y = 0; y < c; ++y) mean += a.at(x * c + y);
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t y = 0; y < c; ++y) {
          double d = a.at(x * c + y) - mean;
          var += d * d;
        }
        var /= static_cast<double>(c);
        double inv = 1.0 / std::sqrt(var + n.scalar);
        for (std::size_t y = 0; y < c; ++y) {
          n.value.at(x * c + y) = (a.at(x * c + y) - mean) * inv;
        }
      }
      return;
    }
    case OpKind::kGelu: {
      const Tensor& a = nodes_[n.args[0]].value;
      for (std::size_t k = 0; k < a.numel(); ++k) {
        n.value.at(k) = gelu_value(a.at(k));
      }
      return;
    }
    case OpKind::kSqrt: {
      const Tensor& a = nodes_[n.args[0]].value;
      for (std::size_t k = 0; k < a.numel(); ++k) {
        n.value.at(k) = std::sqrt(a.at(k));
      }
      return;
    }
    case OpKind::kLog: {
      const Tensor& a = nodes_[n.args[0]].value;
      for (std::size_t k = 0; k < a.numel(); ++k) {
        n.value.at(k) = std::log(a.at(k));
      }
      return;
    }
    case OpKind::kExp: {
      const Tensor& a = nodes_[n.args[0]].value;
      for (std::size_t k = 0; k < a.numel(); ++k) {
        n.value.at(k) = std::exp(a.at(k));
      }
      return;
    }
    case OpKind::kSumAll: {
      const Tensor& a = nodes_[n.args[0]].value;
      double s = 0.0;
      for (double v : a.data()) s += v;
      n.value.at(0) = s;
      return;
    }
    case OpKind::kConv1dGrouped: {
      const Tensor& x = nodes_[n.args[0]].value;
      const Tensor& w = nodes_[n.args[1]].value;
      const Tensor& b = nodes_[n.args[2]].value;
      std::size_t frames = x.rows(), channels = x.cols();
      std::size_t per_group = channels / n.groups;
      std::size_t kernel = n.kernel;
      for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t c = 0; c < channels; ++c) {
          std::size_t group = c / per_group;
          std::size_t in0 = group * per_group;
          double acc = b.at(c);
          for (std::size_t u = 0; u < kernel; ++u) {
            long src = static_cast<long>(t + u) - static_cast<long>(n.pad_left);
            if (src < 0 || src >= static_cast<long>(frames)) continue;
            const double* xrow =
                x.data().data() + static_cast<std::size_t>(src) * channels;
            const double* wrow =
                w.data().data() + c * (kernel * per_group) + u * per_group;
            for (std::size_t j = 0; j < per_group; ++j) {
              acc += wrow[j] * xrow[in0 + j];
            }
          }
          n.value.at(t, c) = acc;
        }
      }
      return;
    }
    case OpKind::kCtcLoss: {
      const Tensor& logits = nodes_[n.args[0]].value;
      std::size_t frames = logits.rows(), vocab = logits.cols();
      const std::vector<int>& y = n.targets;
      std::size_t len = y.size();
      std::size_t states = 2 * len + 1;

      // Log-softmax per frame; keep softmax for the backward pass.
      Tensor logp({frames, vocab});
      n.ctc_softmax = Tensor({frames, vocab});
      for (std::size_t t = 0; t < frames; ++t) {
        double m = kNegInf;
        for (std::size_t v = 0; v < vocab; ++v) m = std::max(m, logits.at(t, v));
        double z = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) z += std::exp(logits.at(t, v) - m);
        double lz = m + std::log(z);
        for (std::size_t v = 0; v < vocab; ++v) {
          logp.at(t, v) = logits.at(t, v) - lz;
          n.ctc_softmax.at(t, v) = std::exp(logp.at(t, v));
        }
      }

      auto state_label = [&](std::size_t s) -> int {
        return (s % 2 == 0) ? 0 : y[s / 2];
      };

      // Feasibility: need len frames plus one per adjacent duplicate.
      std::size_t needed = len;
      for (std::size_t i = 1; i < len; ++i) {
        if (y[i] == y[i - 1]) ++needed;
      }
      if (frames < needed) {
        n.ctc_feasible = false;
        n.ctc_posterior = Tensor({frames, vocab});
        n.value.at(0) = std::numeric_limits<double>::infinity();
        return;
      }
      n.ctc_feasible = true;

      std::vector<double> alpha(frames * states, kNegInf);
      std::vector<double> beta(frames * states, kNegInf);
      alpha[0] = logp.at(0, 0);
      if (states > 1) alpha[1] = logp.at(0, static_cast<std::size_t>(y[0]));
      for (std::size_t t = 1; t < frames; ++t) {
        for (std::size_t s = 0; s < states; ++s) {
          double best = alpha[(t - 1) * states + s];
          if (s >= 1) best = log_add(best, alpha[(t - 1) * states + s - 1]);
          if (s >= 2 && state_label(s) != 0 &&
              state_label(s) != state_label(s - 2)) {
            best = log_add(best, alpha[(t - 1) * states + s - 2]);
          }
          alpha[t * states + s] =
              best + logp.at(t, static_cast<std::size_t>(state_label(s)));
        }
      }
      beta[(frames - 1) * states + states - 1] = logp.at(frames - 1, 0);
      if (states > 1) {
        beta[(frames - 1) * states + states - 2] = logp.at(
            frames - 1, static_cast<std::size_t>(state_label(states - 2)));
      }
      for (std::size_t t = frames - 1; t-- > 0;) {
        for (std::size_t s = 0; s < states; ++s) {
          double best = beta[(t + 1) * states + s];
          if (s + 1 < states) best = log_add(best, beta[(t + 1) * states + s + 1]);
          if (s + 2 < states && state_label(s + 2) != 0 &&
              state_label(s + 2) != state_label(s)) {
            best = log_add(best, beta[(t + 1) * states + s + 2]);
          }
          beta[t * states + s] =
              best + logp.at(t, static_cast<std::size_t>(state_label(s)));
        }
      }

      double log_total = alpha[(frames - 1) * states + states - 1];
      if (states > 1) {
        log_total =
            log_add(log_total, alpha[(frames - 1) * states + states - 2]);
      }
      n.value.at(0) = -log_total;

      // Symbol posterior per frame; alpha and beta both include the frame's
      // emission, so it is divided back out once.
      n.ctc_posterior = Tensor({frames, vocab});
      for (std::size_t t = 0; t < frames; ++t) {
        std::vector<double> acc(vocab, kNegInf);
        for (std::size_t s = 0; s < states; ++s) {
          int lab = state_label(s);
          double term = alpha[t * states + s] + beta[t * states + s] -
                        logp.at(t, static_cast<std::size_t>(lab)) - log_total;
          acc[static_cast<std::size_t>(lab)] =
              log_add(acc[static_cast<std::size_t>(lab)], term);
        }
        for (std::size_t v = 0; v < vocab; ++v) {
          n.ctc_posterior.at(t, v) = acc[v] == kNegInf ? 0.0 : std::exp(acc[v]);
        }
      }
      return;
    }
  }
}

void Graph::forward() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) eval_node(i);
  evaluated_ = true;
}

// ---------------------------------------------------------------------------
// Backward sweep
// ---------------------------------------------------------------------------

void Graph::backprop_node(std::size_t i) {
  Node& n = nodes_[i];
  if (!n.requires_grad) return;
  const Tensor& g = n.grad;
  auto arg_grad = [&](int which) -> Tensor& { return nodes_[n.args[which]].grad; };
  auto arg_val = [&](int which) -> const Tensor& {
    return nodes_[n.args[which]].value;
  };
  auto arg_needs = [&](int which) -> bool {
    return nodes_[n.args[which]].requires_grad;
  };

  switch (n.op) {
    case OpKind::kInput:
    case OpKind::kConstant:
      return;
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv: {
      const Tensor& a = arg_val(0);
      const Tensor& b = arg_val(1);
      std::size_t ra, ca, rb, cb;
      view2d(a, ra, ca);
      view2d(b, rb, cb);
      std::size_t r = std::max(ra, rb), c = std::max(ca, cb);
      for (std::size_t x = 0; x < r; ++x) {
        for (std::size_t y = 0; y < c; ++y) {
          double gv = g.at(x * c + y);
          std::size_t ia = bcast_at(x, y, ra, ca);
          std::size_t ib = bcast_at(x, y, rb, cb);
          switch (n.op) {
            case OpKind::kAdd:
              if (arg_needs(0)) arg_grad(0).at(ia) += gv;
              if (arg_needs(1)) arg_grad(1).at(ib) += gv;
              break;
            case OpKind::kSub:
              if (arg_needs(0)) arg_grad(0).at(ia) += gv;
              if (arg_needs(1)) arg_grad(1).at(ib) -= gv;
              break;
            case OpKind::kMul:
              if (arg_needs(0)) arg_grad(0).at(ia) += gv * b.at(ib);
              if (arg_needs(1)) arg_grad(1).at(ib) += gv * a.at(ia);
              break;
            default: {
              double bv = b.at(ib);
              if (arg_needs(0)) arg_grad(0).at(ia) += gv / bv;
              if (arg_needs(1)) {
                arg_grad(1).at(ib) -= gv * a.at(ia) / (bv * bv);
              }
              break;
            }
          }
        }
      }
      return;
    }
    case OpKind::kScale: {
      if (!arg_needs(0)) return;
      Tensor& ga = arg_grad(0);
      for (std::size_t k = 0; k < g.numel(); ++k) ga.at(k) += g.at(k) * n.scalar;
      return;
    }
    case OpKind::kMatmul: {
      const Tensor& a = arg_val(0);
      const Tensor& b = arg_val(1);
      std::size_t m = a.rows(), kk = a.cols(), p = b.cols();
      if (arg_needs(0)) {
        Tensor& ga = arg_grad(0);
        for (std::size_t x = 0; x < m; ++x) {
          for (std::size_t k = 0; k < kk; ++k) {
            double s = 0.0;
            const double* grow = g.data().data() + x * p;
            const double* brow = b.data().data() + k * p;
            for (std::size_t y = 0; y < p; ++y) s += grow[y] * brow[y];
            ga.at(x, k) += s;
          }
        }
      }
      if (arg_needs(1)) {
        Tensor& gb = arg_grad(1);
        for (std::size_t k = 0; k < kk; ++k) {
          for (std::size_t x = 0; x < m; ++x) {
            double av = a.at(x, k);
            if (av == 0.0) continue;
            const double* grow = g.data().data() + x * p;
            double* grow_b = gb.data().data() + k * p;
            for (std::size_t y = 0; y < p; ++y) grow_b[y] += av * grow[y];
          }
        }
      }
      return;
    }
    case OpKind::kTranspose: {
      if (!arg_needs(0)) return;
      Tensor& ga = arg_grad(0);
      for (std::size_t x = 0; x < n.value.rows(); ++x) {
        for (std::size_t y = 0; y < n.value.cols(); ++y) {
          ga.at(y, x) += g.at(x, y);
        }
      }
      return;
    }
    case OpKind::kReshape: {
      if (!arg_needs(0)) return;
      Tensor& ga = arg_grad(0);
      for (std::size_t k = 0; k < g.numel(); ++k) ga.at(k) += g.at(k);
      return;
    }
    case OpKind::kConcat: {
      const Tensor& a = arg_val(0);
      const Tensor& b = arg_val(1);
      if (n.axis == 0) {
        if (arg_needs(0)) {
          Tensor& ga = arg_grad(0);
          for (std::size_t k = 0; k < a.numel(); ++k) ga.at(k) += g.at(k);
        }
        if (arg_needs(1)) {
          Tensor& gb = arg_grad(1);
          for (std::size_t k = 0; k < b.numel(); ++k) {
            gb.at(k) += g.at(a.numel() + k);
          }
        }
      } else {
        for (std::size_t x = 0; x < a.rows(); ++x) {
          if (arg_needs(0)) {
            for (std::size_t y = 0; y < a.cols(); ++y) {
              arg_grad(0).at(x, y) += g.at(x * n.value.cols() + y);
            }
          }
          if (arg_needs(1)) {
            for (std::size_t y = 0; y < b.cols(); ++y) {
              arg_grad(1).at(x, y) += g.at(x * n.value.cols() + a.cols() + y);
            }
          }
        }
      }
      return;
    }
    case OpKind::kSlice: {
      if (!arg_needs(0)) return;
      Tensor& ga = arg_grad(0);
      for (std::size_t x = n.r0; x < n.r1; ++x) {
        for (std::size_t y = n.c0; y < n.c1; ++y) {
          ga.at(x, y) += g.at(x - n.r0, y - n.c0);
        }
      }
      return;
    }
    case OpKind::kGatherRows: {
      if (!arg_needs(0)) return;
      Tensor& ga = arg_grad(0);
      std::size_t c = ga.cols();
      for (std::size_t x = 0; x < n.indices.size(); ++x) {
        for (std::size_t y = 0; y < c; ++y) {
          ga.at(n.indices[x], y) += g.at(x, y);
        }
      }
      return;
    }
    case OpKind::kRowSelect: {
      std::size_t c = n.value.cols();
      std::vector<bool> from_b(n.value.rows(), false);
      for (std::size_t r : n.indices) from_b[r] = true;
      for (std::size_t x = 0; x < n.value.rows(); ++x) {
        int which = from_b[x] ? 1 : 0;
        if (!arg_needs(which)) continue;
        Tensor& dst = arg_grad(which);
        for (std::size_t y = 0; y < c; ++y) dst.at(x, y) += g.at(x * c + y);
      }
      return;
    }
    case OpKind::kSoftmax: {
      if (!arg_needs(0)) return;
      Tensor& ga = arg_grad(0);
      std::size_t r = n.value.rows(), c = n.value.cols();
      for (std::size_t x = 0; x < r; ++x) {
        double dot = 0.0;
        for (std::size_t y = 0; y < c; ++y) {
          dot += g.at(x * c + y) * n.value.at(x * c + y);
        }
        for (std::size_t y = 0; y < c; ++y) {
          ga.at(x * c + y) +=
              n.value.at(x * c + y) * (g.at(x * c + y) - dot);
        }
      }
      return;
    }
    case OpKind::kLogSumExpRows: {
      if (!arg_needs(0)) return;
      const Tensor& a = arg_val(0);
      Tensor& ga = arg_grad(0);
      std::size_t r = a.rows(), c = a.cols();
      for (std::size_t x = 0; x < r; ++x) {
        for (std::size_t y = 0; y < c; ++y) {
          ga.at(x * c + y) +=
              g.at(x) * std::exp(a.at(x * c + y) - n.value.at(x));
        }
      }
      return;
    }
    case OpKind::kRowSum: {
      if (!arg_needs(0)) return;
      Tensor& ga = arg_grad(0);
      std::size_t r = ga.rows(), c = ga.cols();
      for (std::size_t x = 0; x < r; ++x) {
        for (std::size_t y = 0; y < c; ++y) ga.at(x * c + y) += g.at(x);
      }
      return;
    }
    case OpKind::kLayerNorm: {
      if (!arg_needs(0)) return;
      const Tensor& a = arg_val(0);
      Tensor& ga = arg_grad(0);
      std::size_t r = a.rows(), c = a.cols();
      double cd = static_cast<double>(c);
      for (std::size_t x = 0; x < r; ++x) {
        double mean = 0.0;
        for (std::size_t y = 0; y < c; ++y) mean += a.at(x * c + y);
        mean /= cd;
        double var = 0.0;
        for (std::size_t y = 0; y < c; ++y) {
          double d = a.at(x * c + y) - mean;
          var += d * d;
        }
        var /= cd;
        double inv = 1.0 / std::sqrt(var + n.scalar);
        double gmean = 0.0, gydot = 0.0;
        for (std::size_t y = 0; y < c; ++y) {
          gmean += g.at(x * c + y);
          gydot += g.at(x * c + y) * n.value.at(x * c + y);
        }
        gmean /= cd;
        gydot /= cd;
        for (std::size_t y = 0; y < c; ++y) {
          ga.at(x * c + y) +=
              inv * (g.at(x * c + y) - gmean - n.value.at(x * c + y) * gydot);
        }
      }
      return;
    }
    case OpKind::kGelu: {
      if (!arg_needs(0)) return;
      const Tensor& a = arg_val(0);
      Tensor& ga = arg_grad(0);
      for (std::size_t k = 0; k < a.numel(); ++k) {
        ga.at(k) += g.at(k) * gelu_derivative(a.at(k));
      }
      return;
    }
    case OpKind::kSqrt: {
      if (!arg_needs(0)) return;
      Tensor& ga = arg_grad(0);
      for (std::size_t k = 0; k < g.numel(); ++k) {
        ga.at(k) += g.at(k) * 0.5 / n.value.at(k);
      }
      return;
    }
    case OpKind::kLog: {
      if (!arg_needs(0)) return;
      const Tensor& a = arg_val(0);
      Tensor& ga = arg_grad(0);
      for (std::size_t k = 0; k < g.numel(); ++k) {
        ga.at(k) += g.at(k) / a.at(k);
      }
      return;
    }
    case OpKind::kExp: {
      if (!arg_needs(0)) return;
      Tensor& ga = arg_grad(0);
      for (std::size_t k = 0; k < g.numel(); ++k) {
        ga.at(k) += g.at(k) * n.value.at(k);
      }
      return;
    }
    case OpKind::kSumAll: {
      if (!arg_needs(0)) return;
      Tensor& ga = arg_grad(0);
      for (std::size_t k = 0; k < ga.numel(); ++k) ga.at(k) += g.at(0);
      return;
    }
    case OpKind::kConv1dGrouped: {
      const Tensor& x = arg_val(0);
      const Tensor& w = arg_val(1);
      std::size_t frames = x.rows(), channels = x.cols();
      std::size_t per_group = channels / n.groups;
      std::size_t kernel = n.kernel;
      for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t c = 0; c < channels; ++c) {
          double gv = g.at(t, c);
          if (gv == 0.0) continue;
          std::size_t group = c / per_group;
          std::size_t in0 = group * per_group;
          if (arg_needs(2)) arg_grad(2).at(c) += gv;
          for (std::size_t u = 0; u < kernel; ++u) {
            long src = static_cast<long>(t + u) - static_cast<long>(n.pad_left);
            if (src < 0 || src >= static_cast<long>(frames)) continue;
            std::size_t srow = static_cast<std::size_t>(src);
            for (std::size_t j = 0; j < per_group; ++j) {
              if (arg_needs(1)) {
                arg_grad(1).at(c, u * per_group + j) +=
                    gv * x.at(srow, in0 + j);
              }
              if (arg_needs(0)) {
                arg_grad(0).at(srow, in0 + j) +=
                    gv * w.at(c, u * per_group + j);
              }
            }
          }
        }
      }
      return;
    }
    case OpKind::kCtcLoss: {
      if (!arg_needs(0) || !n.ctc_feasible) return;
      Tensor& ga = arg_grad(0);
      double gv = g.at(0);
      for (std::size_t k = 0; k < ga.numel(); ++k) {
        ga.at(k) += gv * (n.ctc_softmax.at(k) - n.ctc_posterior.at(k));
      }
      return;
    }
  }
}

void Graph::backward(NodeRef loss) {
  if (!evaluated_) {
    throw Error("Graph::backward: forward() has not run");
  }
  Node& l = node(loss);
  if (l.value.numel() != 1) {
    throw Error("Graph::backward: loss node is not scalar, shape " +
                shape_str(l.value));
  }
  for (Node& n : nodes_) {
    n.grad = Tensor(n.value.shape());
  }
  l.grad.at(0) = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) backprop_node(i);
}

const Tensor& Graph::value(NodeRef ref) const { return node(ref).value; }

const Tensor& Graph::grad(NodeRef ref) const { return node(ref).grad; }

Tensor& Graph::input_value(NodeRef ref) {
  Node& n = node(ref);
  if (n.op != OpKind::kInput) {
    throw Error("Graph::input_value: node is not an input");
  }
  evaluated_ = false;
  return n.value;
}

NodeRef Graph::find_input(const std::string& name) const {
  for (const auto& [key, idx] : input_index_) {
    if (key == name) return NodeRef{idx};
  }
  throw Error("Graph::find_input: no input named '" + name + "'");
}

std::vector<std::pair<std::string, NodeRef>> Graph::inputs() const {
  std::vector<std::pair<std::string, NodeRef>> out;
  out.reserve(input_index_.size());
  for (const auto& [key, idx] : input_index_) {
    out.emplace_back(key, NodeRef{idx});
  }
  return out;
}

OpKind Graph::op_kind(NodeRef ref) const { return node(ref).op; }

// ---------------------------------------------------------------------------
// Finite difference checking
// ---------------------------------------------------------------------------

double FiniteDiffReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

bool FiniteDiffReport::passed() const {
  for (const auto& e : entries) {
    if (!(e.max_rel_error <= tolerance)) return false;
  }
  return true;
}

std::vector<std::string> FiniteDiffReport::failures() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (!(e.max_rel_error <= tolerance)) out.push_back(e.input);
  }
  return out;
}

FiniteDiffReport finite_diff_check(Graph& graph, NodeRef loss, double epsilon,
                                   double tolerance) {
  if (!(epsilon > 0.0)) {
    throw Error("finite_diff_check: epsilon must be positive");
  }
  FiniteDiffReport report;
  report.epsilon = epsilon;
  report.tolerance = tolerance;

  graph.forward();
  graph.backward(loss);

  // Snapshot analytic gradients before wiggling anything.
  std::vector<std::pair<std::string, NodeRef>> targets;
  std::vector<Tensor> analytic;
  for (const auto& [name, ref] : graph.inputs()) {
    if (graph.value(ref).requires_grad) {
      targets.emplace_back(name, ref);
      analytic.push_back(graph.grad(ref));
    }
  }

  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& [name, ref] = targets[i];
    Tensor& leaf = graph.input_value(ref);
    double worst = 0.0;
    for (std::size_t k = 0; k < leaf.numel(); ++k) {
      double saved = leaf.at(k);
      leaf.at(k) = saved + epsilon;
      graph.forward();
      double up = graph.value(loss).at(0);
      leaf.at(k) = saved - epsilon;
      graph.forward();
      double down = graph.value(loss).at(0);
      leaf.at(k) = saved;
      double numeric = (up - down) / (2.0 * epsilon);
      double a = analytic[i].at(k);
      double rel = std::abs(a - numeric) /
                   std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
    report.entries.push_back({name, worst});
  }

  // Leave the graph evaluated at the original point.
  graph.forward();
  return report;
}

}  // namespace speechtext

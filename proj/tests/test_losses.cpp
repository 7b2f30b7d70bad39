// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "speechtext/common.hpp"
#include "speechtext/losses.hpp"

using namespace speechtext;

namespace {

// Bind a hubert head with the given projection and codewords.
HubertHeadRefs make_head(Graph& graph, Tensor projection, Tensor codewords,
                         double temperature, bool trainable = false) {
  projection.requires_grad = trainable;
  codewords.requires_grad = trainable;
  return {graph.input("proj", std::move(projection)),
          graph.input("codes", std::move(codewords)), temperature};
}

Tensor log_tensor(const Tensor& probs) {
  Tensor out(probs.shape());
  for (std::size_t k = 0; k < probs.numel(); ++k) out.at(k) = std::log(probs.at(k));
  return out;
}

}  // namespace

TEST_CASE("hubert loss with a single codeword is zero") {
  Graph graph;
  Rng rng(1);
  NodeRef h = graph.input("h", Tensor::randn({3, 4}, rng));
  HubertHeadRefs head = make_head(graph, Tensor::randn({4, 2}, rng),
                                  Tensor::randn({1, 2}, rng), 0.1);
  std::vector<int> labels = {0, 0, 0};
  std::vector<std::size_t> mask = {0, 2};
  auto result = hubert_loss(graph, h, labels, mask, head, 1);
  graph.forward();
  CHECK(graph.value(result.loss).at(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(graph.value(result.probs).at(0) == doctest::Approx(1.0));
}

TEST_CASE("hubert loss reproduces the temperature-scaled worked value") {
  // Cosine scores (1, 0) at temperature 0.1 give p = e^10 / (e^10 + 1).
  Graph graph;
  NodeRef h = graph.input("h", Tensor::matrix(1, 2, {1.0, 0.0}));
  HubertHeadRefs head = make_head(graph, Tensor::matrix(2, 2, {1, 0, 0, 1}),
                                  Tensor::matrix(2, 2, {1, 0, 0, 1}), 0.1);
  std::vector<int> labels = {0};
  std::vector<std::size_t> mask = {0};
  auto result = hubert_loss(graph, h, labels, mask, head, 2);
  graph.forward();
  double expected_p = std::exp(10.0) / (std::exp(10.0) + 1.0);
  CHECK(graph.value(result.probs).at(0, 0) ==
        doctest::Approx(expected_p).epsilon(1e-9));
  CHECK(graph.value(result.loss).at(0) ==
        doctest::Approx(-std::log(expected_p)).epsilon(1e-9));
}

TEST_CASE("hubert probabilities sum to one per frame") {
  Graph graph;
  Rng rng(2);
  NodeRef h = graph.input("h", Tensor::randn({6, 5}, rng));
  HubertHeadRefs head = make_head(graph, Tensor::randn({5, 3}, rng),
                                  Tensor::randn({4, 3}, rng), 0.1);
  std::vector<int> labels = {0, 1, 2, 3, 0, 1};
  std::vector<std::size_t> mask = {0, 1, 3, 5};
  auto result = hubert_loss(graph, h, labels, mask, head, 4);
  graph.forward();
  const Tensor& probs = graph.value(result.probs);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) total += probs.at(r, c);
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("empty mask contributes zero with a zero count") {
  Graph graph;
  Rng rng(3);
  NodeRef h = graph.input("h", Tensor::randn({4, 5}, rng));
  HubertHeadRefs head = make_head(graph, Tensor::randn({5, 3}, rng),
                                  Tensor::randn({4, 3}, rng), 0.1);
  std::vector<int> labels = {0, 1, 2, 3};
  auto result = hubert_loss(graph, h, labels, {}, head, 4);
  graph.forward();
  CHECK(result.count == 0);
  CHECK(graph.value(result.loss).at(0) == 0.0);
}

TEST_CASE("hubert loss rejects out of range labels") {
  Graph graph;
  Rng rng(4);
  NodeRef h = graph.input("h", Tensor::randn({2, 5}, rng));
  HubertHeadRefs head = make_head(graph, Tensor::randn({5, 3}, rng),
                                  Tensor::randn({4, 3}, rng), 0.1);
  std::vector<int> labels = {0, 7};
  std::vector<std::size_t> mask = {1};
  CHECK_THROWS_AS(hubert_loss(graph, h, labels, mask, head, 4), Error);
}

TEST_CASE("rescaling one codeword embedding preserves the loss exactly") {
  Rng rng(5);
  Tensor h_val = Tensor::randn({4, 5}, rng);
  Tensor proj = Tensor::randn({5, 3}, rng);
  Tensor codes = Tensor::randn({4, 3}, rng);
  std::vector<int> labels = {2, 0, 3, 1};
  std::vector<std::size_t> mask = {0, 1, 2, 3};

  auto eval = [&](const Tensor& codewords) {
    Graph graph;
    NodeRef h = graph.input("h", h_val);
    HubertHeadRefs head = make_head(graph, proj, codewords, 0.1);
    auto result = hubert_loss(graph, h, labels, mask, head, 4);
    graph.forward();
    return graph.value(result.loss).at(0);
  };

  Tensor scaled = codes;
  for (std::size_t c = 0; c < 3; ++c) scaled.at(2, c) *= 13.7;
  CHECK(eval(codes) == doctest::Approx(eval(scaled)).epsilon(1e-12));
}

TEST_CASE("hubert loss ignores unmasked positions") {
  Rng rng(6);
  Tensor h_val = Tensor::randn({5, 4}, rng);
  Tensor proj = Tensor::randn({4, 3}, rng);
  Tensor codes = Tensor::randn({3, 3}, rng);
  std::vector<int> labels = {0, 1, 2, 1, 0};
  std::vector<std::size_t> mask = {1, 3};

  auto eval = [&](const Tensor& h_in) {
    Graph graph;
    NodeRef h = graph.input("h", h_in);
    HubertHeadRefs head = make_head(graph, proj, codes, 0.1);
    auto result = hubert_loss(graph, h, labels, mask, head, 3);
    graph.forward();
    return graph.value(result.loss).at(0);
  };

  Tensor perturbed = h_val;
  for (std::size_t c = 0; c < 4; ++c) {
    perturbed.at(0, c) += 3.0;
    perturbed.at(4, c) -= 2.0;
  }
  CHECK(eval(h_val) == eval(perturbed));
}

TEST_CASE("hubert loss gradient is correct") {
  Graph graph;
  Rng rng(7);
  Tensor h_val = Tensor::randn({4, 5}, rng);
  h_val.requires_grad = true;
  NodeRef h = graph.input("h", h_val);
  HubertHeadRefs head = make_head(graph, Tensor::randn({5, 3}, rng),
                                  Tensor::randn({4, 3}, rng), 0.1, true);
  std::vector<int> labels = {1, 0, 3, 2};
  std::vector<std::size_t> mask = {0, 2, 3};
  auto result = hubert_loss(graph, h, labels, mask, head, 4);
  auto report = finite_diff_check(graph, result.loss, 1e-4, 1e-3);
  CHECK(report.passed());
}

TEST_CASE("mlm loss equals log vocab for uniform logits") {
  Graph graph;
  Rng rng(8);
  NodeRef h = graph.input("h", Tensor::randn({4, 5}, rng));
  NodeRef w = graph.input("w", Tensor::zeros({5, 7}));
  NodeRef b = graph.input("b", Tensor::zeros({7}));
  std::vector<int> targets = {0, 3, 6, 2};
  std::vector<std::size_t> mask = {1, 2};
  NodeRef loss = mlm_loss(graph, h, targets, mask, w, b, 7);
  graph.forward();
  CHECK(graph.value(loss).at(0) == doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("mlm loss vanishes for confident correct logits") {
  Graph graph;
  NodeRef h = graph.input("h", Tensor::matrix(2, 2, {1, 0, 0, 1}));
  // Head maps each state to a huge margin on its target.
  NodeRef w = graph.input("w", Tensor::matrix(2, 2, {50, 0, 0, 50}));
  NodeRef b = graph.input("b", Tensor::zeros({2}));
  std::vector<int> targets = {0, 1};
  std::vector<std::size_t> mask = {0, 1};
  NodeRef loss = mlm_loss(graph, h, targets, mask, w, b, 2);
  graph.forward();
  CHECK(graph.value(loss).at(0) < 1e-12);
}

TEST_CASE("mlm loss is restricted to the mask") {
  Graph graph;
  Rng rng(9);
  Tensor h_val = Tensor::randn({5, 4}, rng);
  Tensor w_val = Tensor::randn({4, 6}, rng);
  NodeRef h = graph.input("h", h_val);
  NodeRef w = graph.input("w", w_val);
  NodeRef b = graph.input("b", Tensor::zeros({6}));
  std::vector<int> targets = {0, 1, 2, 3, 4};
  std::vector<std::size_t> mask = {1, 3};
  std::vector<std::size_t> wider = {1, 3, 4};
  NodeRef restricted = mlm_loss(graph, h, targets, mask, w, b, 6);
  NodeRef wide = mlm_loss(graph, h, targets, wider, w, b, 6);
  graph.forward();
  CHECK(graph.value(restricted).at(0) != graph.value(wide).at(0));
}

TEST_CASE("mlm loss gradient is correct") {
  Graph graph;
  Rng rng(10);
  Tensor h_val = Tensor::randn({4, 3}, rng);
  h_val.requires_grad = true;
  Tensor w_val = Tensor::randn({3, 5}, rng);
  w_val.requires_grad = true;
  Tensor b_val = Tensor::randn({5}, rng);
  b_val.requires_grad = true;
  NodeRef h = graph.input("h", h_val);
  NodeRef w = graph.input("w", w_val);
  NodeRef b = graph.input("b", b_val);
  std::vector<int> targets = {0, 4, 2, 1};
  std::vector<std::size_t> mask = {0, 2, 3};
  NodeRef loss = mlm_loss(graph, h, targets, mask, w, b, 5);
  auto report = finite_diff_check(graph, loss, 1e-4, 1e-3);
  CHECK(report.passed());
}

TEST_CASE("ctc single frame single path") {
  Graph graph;
  Tensor probs = Tensor::matrix(1, 2, {0.4, 0.6});
  NodeRef logits = graph.input("logits", log_tensor(probs));
  std::vector<int> target = {1};
  NodeRef loss = ctc_loss(graph, logits, target);
  graph.forward();
  CHECK(graph.value(loss).at(0) == doctest::Approx(-std::log(0.6)).epsilon(1e-12));
}

TEST_CASE("ctc two frames enumerates three alignments") {
  Graph graph;
  Tensor probs = Tensor::matrix(2, 2, {0.5, 0.5, 0.5, 0.5});
  NodeRef logits = graph.input("logits", log_tensor(probs));
  std::vector<int> target = {1};
  NodeRef loss = ctc_loss(graph, logits, target);
  graph.forward();
  CHECK(graph.value(loss).at(0) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("ctc empty target with certain blanks is free") {
  Graph graph;
  Tensor logits = Tensor::matrix(3, 2, {100, -100, 100, -100, 100, -100});
  NodeRef in = graph.input("logits", logits);
  NodeRef loss = ctc_loss(graph, in, {});
  graph.forward();
  CHECK(graph.value(loss).at(0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ctc matches the brute force oracle on the small grid") {
  Rng rng(2026);
  for (std::size_t frames = 1; frames <= 5; ++frames) {
    // Every target over two non-blank symbols with |y| <= 3.
    std::vector<std::vector<int>> targets = {{}};
    for (std::size_t len = 1; len <= 3; ++len) {
      std::vector<std::vector<int>> extended;
      for (const auto& t : targets) {
        if (t.size() + 1 == len || (len == 1 && t.empty())) {
          for (int s = 1; s <= 2; ++s) {
            auto copy = t;
            copy.push_back(s);
            extended.push_back(copy);
          }
        }
      }
      for (auto& t : extended) {
        if (t.size() == len) targets.push_back(t);
      }
    }
    for (const auto& target : targets) {
      Tensor probs({frames, 3});
      for (std::size_t t = 0; t < frames; ++t) {
        double z = 0.0;
        for (std::size_t v = 0; v < 3; ++v) {
          probs.at(t, v) = 0.1 + rng.uniform();
          z += probs.at(t, v);
        }
        for (std::size_t v = 0; v < 3; ++v) probs.at(t, v) /= z;
      }
      double oracle = ctc_brute_force(probs, target);
      Graph graph;
      NodeRef logits = graph.input("logits", log_tensor(probs));
      NodeRef loss = ctc_loss(graph, logits, target);
      graph.forward();
      double dp = graph.value(loss).at(0);
      if (std::isinf(oracle)) {
        CHECK(std::isinf(dp));
      } else {
        CHECK(std::abs(dp - oracle) < 1e-9);
      }
    }
  }
}

TEST_CASE("impossible targets yield the infinity sentinel") {
  Tensor probs = Tensor::matrix(1, 3, {0.2, 0.4, 0.4});
  std::vector<int> target = {1, 2};  // needs two frames
  CHECK(std::isinf(ctc_brute_force(probs, target)));

  Graph graph;
  NodeRef logits = graph.input("logits", log_tensor(probs));
  NodeRef loss = ctc_loss(graph, logits, target);
  graph.forward();
  CHECK(std::isinf(graph.value(loss).at(0)));
  CHECK(graph.value(loss).at(0) > 0);

  // Zero gradient rather than NaN.
  graph.backward(loss);
  for (double v : graph.grad(logits).data()) CHECK(v == 0.0);
}

TEST_CASE("brute force bounds are enforced") {
  Tensor too_long({9, 2});
  CHECK_THROWS_AS(ctc_brute_force(too_long, {}), Error);
  Tensor too_wide({2, 5});
  CHECK_THROWS_AS(ctc_brute_force(too_wide, {}), Error);
}

TEST_CASE("ctc gradient is correct") {
  Graph graph;
  Rng rng(11);
  Tensor logits = Tensor::randn({5, 4}, rng);
  logits.requires_grad = true;
  NodeRef in = graph.input("logits", logits);
  std::vector<int> target = {2, 1, 2};
  NodeRef loss = ctc_loss(graph, in, target);
  auto report = finite_diff_check(graph, loss, 1e-4, 1e-3);
  CHECK(report.passed());
}

TEST_CASE("ce alignment of identical states equals the entropy") {
  Graph graph;
  Rng rng(12);
  Tensor h_val = Tensor::randn({4, 5}, rng);
  NodeRef a = graph.input("a", h_val);
  NodeRef b = graph.input("b", h_val);
  std::vector<std::size_t> unmasked = {0, 1, 2, 3};
  NodeRef loss = ce_alignment_loss(graph, a, b, unmasked);
  graph.forward();

  double entropy = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    double z = 0.0, m = -1e30;
    for (std::size_t c = 0; c < 5; ++c) m = std::max(m, h_val.at(r, c));
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(h_val.at(r, c) - m);
    for (std::size_t c = 0; c < 5; ++c) {
      double p = std::exp(h_val.at(r, c) - m) / z;
      entropy -= p * std::log(p);
    }
  }
  entropy /= 4.0;
  CHECK(graph.value(loss).at(0) == doctest::Approx(entropy).epsilon(1e-12));
}

TEST_CASE("ce alignment with no unmasked positions is zero") {
  Graph graph;
  Rng rng(13);
  NodeRef a = graph.input("a", Tensor::randn({3, 4}, rng));
  NodeRef b = graph.input("b", Tensor::randn({3, 4}, rng));
  NodeRef loss = ce_alignment_loss(graph, a, b, {});
  graph.forward();
  CHECK(graph.value(loss).at(0) == 0.0);
}

TEST_CASE("ce alignment is asymmetric in general") {
  Graph graph;
  Rng rng(14);
  Tensor av = Tensor::randn({3, 4}, rng);
  Tensor bv = Tensor::randn({3, 4}, rng);
  NodeRef a = graph.input("a", av);
  NodeRef b = graph.input("b", bv);
  std::vector<std::size_t> unmasked = {0, 1, 2};
  NodeRef fwd = ce_alignment_loss(graph, a, b, unmasked);
  NodeRef rev = ce_alignment_loss(graph, b, a, unmasked);
  graph.forward();
  CHECK(graph.value(fwd).at(0) != graph.value(rev).at(0));
}

TEST_CASE("ce alignment gradient is correct") {
  Graph graph;
  Rng rng(15);
  Tensor av = Tensor::randn({4, 3}, rng);
  av.requires_grad = true;
  Tensor bv = Tensor::randn({4, 3}, rng);
  bv.requires_grad = true;
  NodeRef a = graph.input("a", av);
  NodeRef b = graph.input("b", bv);
  std::vector<std::size_t> unmasked = {0, 2};
  NodeRef loss = ce_alignment_loss(graph, a, b, unmasked);
  auto report = finite_diff_check(graph, loss, 1e-4, 1e-3);
  CHECK(report.passed());
}

TEST_CASE("loss bundle finiteness") {
  LossBundle bundle;
  CHECK(bundle.finite());
  CHECK(bundle.total() == 0.0);
  bundle.ctc = std::numeric_limits<double>::infinity();
  CHECK(!bundle.finite());
}

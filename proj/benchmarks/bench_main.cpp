// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "speechtext/common.hpp"
#include "speechtext/decode.hpp"
#include "speechtext/encoder.hpp"
#include "speechtext/graph.hpp"
#include "speechtext/labeler.hpp"
#include "speechtext/losses.hpp"

using namespace speechtext;

namespace {

ModelConfig bench_config() {
  ModelConfig cfg;
  cfg.phoneme_vocab = 16;
  cfg.char_vocab = 12;
  return cfg;  // desk-scale defaults otherwise
}

void EncoderForward(benchmark::State& state) {
  Rng rng(1);
  Model model(bench_config(), rng);
  std::size_t frames = static_cast<std::size_t>(state.range(0));
  Tensor features = Tensor::randn({frames, model.config().speech_feature_dim}, rng);
  Tensor embedded = model.embed_speech_values(features);
  for (auto _ : state) {
    HiddenStates states = model.encode(embedded, Modality::kSpeech);
    benchmark::DoNotOptimize(states.per_layer.back().data().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(EncoderForward)->RangeMultiplier(2)->Range(16, 128)->Complexity();

void EncoderForwardBackward(benchmark::State& state) {
  Rng rng(2);
  Model model(bench_config(), rng);
  std::size_t frames = static_cast<std::size_t>(state.range(0));
  Tensor features = Tensor::randn({frames, model.config().speech_feature_dim}, rng);
  for (auto _ : state) {
    Graph graph;
    Model::Bound bound = model.bind(graph, true);
    NodeRef x = model.embed_speech(graph, bound, features);
    auto priv = model.encode_private(graph, bound, x, Modality::kSpeech);
    auto shared = model.encode_shared(graph, bound, priv.out);
    NodeRef loss = graph.sum_all(shared.out);
    graph.forward();
    graph.backward(loss);
    benchmark::DoNotOptimize(graph.grad(x).data().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(EncoderForwardBackward)->RangeMultiplier(2)->Range(16, 64)->Complexity();

void CtcForwardBackward(benchmark::State& state) {
  Rng rng(3);
  std::size_t frames = static_cast<std::size_t>(state.range(0));
  Tensor logits = Tensor::randn({frames, 30}, rng);
  logits.requires_grad = true;
  std::vector<int> target;
  for (std::size_t i = 0; i < frames / 4; ++i) {
    target.push_back(1 + static_cast<int>(rng.uniform_index(29)));
  }
  for (auto _ : state) {
    Graph graph;
    NodeRef loss = ctc_loss(graph, graph.input("logits", logits), target);
    graph.forward();
    graph.backward(loss);
    benchmark::DoNotOptimize(graph.value(loss).at(0));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(CtcForwardBackward)->RangeMultiplier(2)->Range(32, 256)->Complexity();

void KmeansFit(benchmark::State& state) {
  Rng data_rng(4);
  std::size_t rows = static_cast<std::size_t>(state.range(0));
  Tensor data = Tensor::randn({rows, 39}, data_rng);
  for (auto _ : state) {
    Rng rng(5);
    Codebook book = kmeans_fit(data, 16, 10, rng);
    benchmark::DoNotOptimize(book.centroids.data().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(KmeansFit)->RangeMultiplier(4)->Range(256, 4096)->Complexity();

void BeamDecode(benchmark::State& state) {
  Rng rng(6);
  std::size_t frames = static_cast<std::size_t>(state.range(0));
  Tensor logp({frames, 12});
  for (std::size_t t = 0; t < frames; ++t) {
    double z = 0.0;
    for (std::size_t v = 0; v < 12; ++v) {
      logp.at(t, v) = 0.05 + rng.uniform();
      z += logp.at(t, v);
    }
    for (std::size_t v = 0; v < 12; ++v) logp.at(t, v) = std::log(logp.at(t, v) / z);
  }
  DecodeConfig cfg;
  cfg.beam = 16;
  for (auto _ : state) {
    Hypothesis hyp = beam_decode(logp, nullptr, cfg);
    benchmark::DoNotOptimize(hyp.score);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BeamDecode)->RangeMultiplier(2)->Range(16, 128)->Complexity();

void MfccExtract(benchmark::State& state) {
  Rng rng(7);
  std::size_t seconds = static_cast<std::size_t>(state.range(0));
  std::vector<double> samples(16000 * seconds);
  for (double& s : samples) s = rng.normal();
  for (auto _ : state) {
    Tensor features = compute_mfcc(samples, 16000.0);
    benchmark::DoNotOptimize(features.data().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(MfccExtract)->Range(1, 8)->Complexity();

}  // namespace

BENCHMARK_MAIN();

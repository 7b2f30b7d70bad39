// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "speechtext/graph.hpp"
#include "speechtext/tensor.hpp"

namespace speechtext {

class Rng;

enum class Modality { kSpeech, kText };

const char* modality_name(Modality modality);

// Architecture hyperparameters. Defaults are the desk-scale configuration;
// everything is overridable from the config file.
struct ModelConfig {
  std::size_t model_dim = 32;
  std::size_t inner_dim = 64;
  std::size_t heads = 4;
  std::size_t layers_speech = 2;
  std::size_t layers_text = 2;
  std::size_t layers_shared = 2;
  std::size_t layers_char = 1;
  std::size_t conv_pos_kernel = 7;
  std::size_t conv_pos_groups = 4;
  // Whether the convolutional positional term also applies to the text
  // encoder (it always applies to speech when enabled at all).
  bool conv_pos_text = true;
  bool use_conv_pos = true;
  bool use_rel_bias = true;
  std::size_t rel_bias_buckets = 32;
  std::size_t rel_bias_max_distance = 128;
  std::size_t speech_feature_dim = 8;
  std::size_t hubert_dim = 16;
  double hubert_temperature = 0.1;
  std::size_t phoneme_vocab = 8;
  std::size_t char_vocab = 8;  // includes the blank at index 0
  std::size_t codeword_count = 16;

  void validate() const;
};

// Sign-folded bucket index for the relative offset key_pos - query_pos:
// exact buckets for small magnitudes, log-spaced out to max_distance, and
// monotone in the magnitude.
std::size_t relative_bucket(long query_pos, long key_pos, std::size_t buckets,
                            std::size_t max_distance);

// Captured per-layer states of one encode pass. Index 0 is the embedded
// input; 1..P the private encoder layers; P+1..P+S the shared layers.
struct HiddenStates {
  std::vector<Tensor> per_layer;
  std::vector<std::size_t> mask_positions;
  Modality modality = Modality::kSpeech;

  std::size_t frames() const;
};

struct HubertHeadRefs {
  NodeRef projection;  // [model_dim, hubert_dim]
  NodeRef codewords;   // [C, hubert_dim]
  double temperature = 0.1;
};

// The model body: speech/text private encoders, shared encoder, character
// encoding layer, plus all prediction heads and mask embeddings. Parameters
// are plain named tensors; graphs are built per utterance on top of them.
//
// Parameters are immutable during forward passes; training is the single
// writer through mutable_parameters().
class Model {
 public:
  Model(ModelConfig config, Rng& rng);
  Model(ModelConfig config, std::map<std::string, Tensor> parameters);

  const ModelConfig& config() const { return config_; }
  const std::map<std::string, Tensor>& parameters() const { return params_; }
  std::map<std::string, Tensor>& mutable_parameters() { return params_; }
  bool has_parameter(const std::string& name) const;

  // --- graph builders ------------------------------------------------------

  // Binds every parameter as a graph input named `param:<name>`.
  struct Bound {
    std::map<std::string, NodeRef> refs;
    NodeRef at(const std::string& name) const;
  };
  Bound bind(Graph& graph, bool trainable) const;

  NodeRef embed_speech(Graph& graph, const Bound& bound,
                       const Tensor& features) const;
  NodeRef embed_text(Graph& graph, const Bound& bound,
                     std::span<const int> phoneme_ids) const;
  // Masked rows become the modality's learned mask embedding; gradient flows
  // into the embedding.
  NodeRef replace_masked(Graph& graph, const Bound& bound, NodeRef embedded,
                         std::span<const std::size_t> mask,
                         Modality modality) const;

  struct StackOut {
    std::vector<NodeRef> captured;  // one per layer, excluding the input
    NodeRef out;
    std::vector<NodeRef> attention_rows;  // row-softmax nodes per layer/head
  };
  StackOut encode_private(Graph& graph, const Bound& bound, NodeRef x,
                          Modality modality) const;
  StackOut encode_shared(Graph& graph, const Bound& bound, NodeRef x) const;

  // Character path: optional extra transformer layers, then the character
  // head. With layers_char == 0 the head applies directly.
  NodeRef char_logits(Graph& graph, const Bound& bound, NodeRef h_shared) const;
  NodeRef phoneme_logits(Graph& graph, const Bound& bound, NodeRef h) const;
  HubertHeadRefs hubert_head(const Bound& bound) const;

  // Standalone convolutional positional term: x + gelu(grouped_conv(x)).
  NodeRef conv_positional(Graph& graph, const Bound& bound, NodeRef x,
                          Modality modality) const;

  // --- value-side helpers ----------------------------------------------------

  Tensor embed_speech_values(const Tensor& features) const;
  Tensor embed_text_values(std::span<const int> phoneme_ids) const;
  Tensor conv_positional_values(const Tensor& frames, Modality modality) const;
  const Tensor& mask_embedding(Modality modality) const;

  // Full private-then-shared pass over already-embedded (and, per the
  // masking contract, already mask-replaced) input. Captures every layer.
  HiddenStates encode(const Tensor& embedded, Modality modality,
                      std::span<const std::size_t> mask = {}) const;

  // Layer indices into HiddenStates::per_layer.
  std::size_t private_out_index(Modality modality) const;
  std::size_t shared_mid_index(Modality modality) const;
  std::size_t shared_out_index(Modality modality) const;

  // Fresh draws for the character head (fine-tuning without the pre-trained
  // head) and for char layers absent from a checkpoint.
  void reinit_char_head(Rng& rng);
  void ensure_char_parameters(Rng& rng);

 private:
  void init_parameters(Rng& rng);
  void init_linear(const std::string& name, std::size_t fan_in,
                   std::size_t fan_out, Rng& rng);
  void init_layer(const std::string& prefix, Rng& rng);
  NodeRef transformer_layer(Graph& graph, const Bound& bound, NodeRef x,
                            const std::string& prefix,
                            std::vector<NodeRef>* attention_rows) const;
  NodeRef affine_layer_norm(Graph& graph, const Bound& bound, NodeRef x,
                            const std::string& prefix) const;
  std::size_t private_layers(Modality modality) const;

  ModelConfig config_;
  std::map<std::string, Tensor> params_;
};

}  // namespace speechtext

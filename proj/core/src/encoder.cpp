// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/encoder.hpp"

#include <cmath>
#include <string>

#include "speechtext/common.hpp"

namespace speechtext {

const char* modality_name(Modality modality) {
  return modality == Modality::kSpeech ? "speech" : "text";
}

void ModelConfig::validate() const {
  if (model_dim == 0 || heads == 0 || model_dim % heads != 0) {
    throw ConfigError("ModelConfig: model_dim must be divisible by heads");
  }
  if (conv_pos_groups == 0 || model_dim % conv_pos_groups != 0) {
    throw ConfigError("ModelConfig: conv_pos_groups must divide model_dim");
  }
  if (conv_pos_kernel == 0) {
    throw ConfigError("ModelConfig: conv_pos_kernel must be positive");
  }
  if (rel_bias_buckets < 2) {
    throw ConfigError("ModelConfig: rel_bias_buckets must be at least 2");
  }
  if (rel_bias_max_distance <= rel_bias_buckets / 2) {
    throw ConfigError(
        "ModelConfig: rel_bias_max_distance must exceed rel_bias_buckets/2");
  }
  if (inner_dim == 0 || speech_feature_dim == 0 || hubert_dim == 0 ||
      phoneme_vocab == 0 || char_vocab < 2 || codeword_count == 0) {
    throw ConfigError("ModelConfig: zero-sized component");
  }
  if (hubert_temperature <= 0.0) {
    throw ConfigError("ModelConfig: hubert_temperature must be positive");
  }
}

std::size_t relative_bucket(long query_pos, long key_pos, std::size_t buckets,
                            std::size_t max_distance) {
  if (buckets < 2) throw ConfigError("relative_bucket: need at least 2 buckets");
  std::size_t max_exact = buckets / 2;
  if (max_distance <= max_exact) {
    throw ConfigError("relative_bucket: max_distance must exceed buckets/2");
  }
  long offset = key_pos - query_pos;
  std::size_t magnitude =
      static_cast<std::size_t>(offset < 0 ? -offset : offset);
  if (magnitude < max_exact) return magnitude;
  double ratio = std::log(static_cast<double>(magnitude) /
                          static_cast<double>(max_exact)) /
                 std::log(static_cast<double>(max_distance) /
                          static_cast<double>(max_exact));
  std::size_t bucket =
      max_exact + static_cast<std::size_t>(
                      ratio * static_cast<double>(buckets - max_exact));
  return std::min(bucket, buckets - 1);
}

std::size_t HiddenStates::frames() const {
  return per_layer.empty() ? 0 : per_layer.front().rows();
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

Model::Model(ModelConfig config, Rng& rng) : config_(config) {
  config_.validate();
  init_parameters(rng);
}

Model::Model(ModelConfig config, std::map<std::string, Tensor> parameters)
    : config_(config), params_(std::move(parameters)) {
  config_.validate();
}

bool Model::has_parameter(const std::string& name) const {
  return params_.count(name) > 0;
}

void Model::init_linear(const std::string& name, std::size_t fan_in,
                        std::size_t fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  params_[name + ".w"] = Tensor::rand_uniform({fan_in, fan_out}, rng, -bound, bound);
  params_[name + ".b"] = Tensor::zeros({fan_out});
}

void Model::init_layer(const std::string& prefix, Rng& rng) {
  std::size_t d = config_.model_dim;
  params_[prefix + ".ln1.g"] = Tensor::full({d}, 1.0);
  params_[prefix + ".ln1.b"] = Tensor::zeros({d});
  init_linear(prefix + ".attn.q", d, d, rng);
  // No key bias: a shared shift of every key moves all scores in a row by
  // the same amount and softmax cancels it.
  double key_bound = std::sqrt(6.0 / static_cast<double>(d + d));
  params_[prefix + ".attn.k.w"] =
      Tensor::rand_uniform({d, d}, rng, -key_bound, key_bound);
  init_linear(prefix + ".attn.v", d, d, rng);
  init_linear(prefix + ".attn.o", d, d, rng);
  params_[prefix + ".attn.bias"] =
      Tensor::randn({config_.rel_bias_buckets, config_.heads}, rng, 0.02);
  params_[prefix + ".ln2.g"] = Tensor::full({d}, 1.0);
  params_[prefix + ".ln2.b"] = Tensor::zeros({d});
  init_linear(prefix + ".ffn.in", d, config_.inner_dim, rng);
  init_linear(prefix + ".ffn.out", config_.inner_dim, d, rng);
}

void Model::init_parameters(Rng& rng) {
  std::size_t d = config_.model_dim;

  init_linear("speech.in_proj", config_.speech_feature_dim, d, rng);
  params_["text.embed"] = Tensor::randn({config_.phoneme_vocab, d}, rng, 0.1);
  params_["mask_embed.speech"] = Tensor::randn({1, d}, rng, 0.1);
  params_["mask_embed.text"] = Tensor::randn({1, d}, rng, 0.1);

  std::size_t per_group = d / config_.conv_pos_groups;
  double conv_bound =
      std::sqrt(6.0 / static_cast<double>(config_.conv_pos_kernel * per_group + d));
  for (const char* stack : {"speech", "text"}) {
    params_[std::string(stack) + ".convpos.w"] = Tensor::rand_uniform(
        {d, config_.conv_pos_kernel * per_group}, rng, -conv_bound, conv_bound);
    params_[std::string(stack) + ".convpos.b"] = Tensor::zeros({d});
  }

  for (std::size_t i = 0; i < config_.layers_speech; ++i) {
    init_layer("speech.layer" + std::to_string(i), rng);
  }
  for (std::size_t i = 0; i < config_.layers_text; ++i) {
    init_layer("text.layer" + std::to_string(i), rng);
  }
  for (std::size_t i = 0; i < config_.layers_shared; ++i) {
    init_layer("shared.layer" + std::to_string(i), rng);
  }
  params_["shared.ln_out.g"] = Tensor::full({d}, 1.0);
  params_["shared.ln_out.b"] = Tensor::zeros({d});

  for (std::size_t i = 0; i < config_.layers_char; ++i) {
    init_layer("char.layer" + std::to_string(i), rng);
  }
  init_linear("char.head", d, config_.char_vocab, rng);
  init_linear("mlm.head", d, config_.phoneme_vocab, rng);

  double proj_bound = std::sqrt(6.0 / static_cast<double>(d + config_.hubert_dim));
  params_["hubert.proj"] =
      Tensor::rand_uniform({d, config_.hubert_dim}, rng, -proj_bound, proj_bound);
  params_["hubert.codewords"] =
      Tensor::randn({config_.codeword_count, config_.hubert_dim}, rng, 1.0);
}

void Model::reinit_char_head(Rng& rng) {
  init_linear("char.head", config_.model_dim, config_.char_vocab, rng);
}

void Model::ensure_char_parameters(Rng& rng) {
  for (std::size_t i = 0; i < config_.layers_char; ++i) {
    std::string prefix = "char.layer" + std::to_string(i);
    if (!has_parameter(prefix + ".ln1.g")) init_layer(prefix, rng);
  }
  if (!has_parameter("char.head.w")) reinit_char_head(rng);
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

NodeRef Model::Bound::at(const std::string& name) const {
  auto it = refs.find(name);
  if (it == refs.end()) {
    throw Error("Model: no bound parameter named '" + name + "'");
  }
  return it->second;
}

Model::Bound Model::bind(Graph& graph, bool trainable) const {
  Bound bound;
  for (const auto& [name, tensor] : params_) {
    Tensor copy = tensor;
    copy.requires_grad = trainable;
    bound.refs[name] = graph.input("param:" + name, std::move(copy));
  }
  return bound;
}

NodeRef Model::embed_speech(Graph& graph, const Bound& bound,
                            const Tensor& features) const {
  if (features.ndim() != 2 || features.cols() != config_.speech_feature_dim) {
    throw ShapeError("embed_speech: features must be [T, " +
                     std::to_string(config_.speech_feature_dim) + "]");
  }
  if (features.rows() == 0) throw Error("embed_speech: empty input");
  NodeRef x = graph.input("features", features);
  return graph.add(graph.matmul(x, bound.at("speech.in_proj.w")),
                   bound.at("speech.in_proj.b"));
}

NodeRef Model::embed_text(Graph& graph, const Bound& bound,
                          std::span<const int> phoneme_ids) const {
  if (phoneme_ids.empty()) throw Error("embed_text: empty input");
  std::vector<std::size_t> rows;
  rows.reserve(phoneme_ids.size());
  for (int id : phoneme_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.phoneme_vocab) {
      throw Error("embed_text: phoneme id " + std::to_string(id) +
                  " outside the vocabulary");
    }
    rows.push_back(static_cast<std::size_t>(id));
  }
  return graph.gather_rows(bound.at("text.embed"), std::move(rows));
}

NodeRef Model::replace_masked(Graph& graph, const Bound& bound, NodeRef embedded,
                              std::span<const std::size_t> mask,
                              Modality modality) const {
  if (mask.empty()) return embedded;
  std::size_t frames = graph.value(embedded).rows();
  NodeRef embedding = bound.at(std::string("mask_embed.") + modality_name(modality));
  // Broadcast the embedding row over all frames, then select the masked rows.
  NodeRef ones = graph.constant(Tensor::full({frames, 1}, 1.0));
  NodeRef tiled = graph.matmul(ones, embedding);
  return graph.row_select(embedded, tiled,
                          std::vector<std::size_t>(mask.begin(), mask.end()));
}

NodeRef Model::affine_layer_norm(Graph& graph, const Bound& bound, NodeRef x,
                                 const std::string& prefix) const {
  NodeRef normed = graph.layer_norm(x);
  return graph.add(graph.mul(normed, bound.at(prefix + ".g")),
                   bound.at(prefix + ".b"));
}

NodeRef Model::conv_positional(Graph& graph, const Bound& bound, NodeRef x,
                               Modality modality) const {
  const std::string stack = modality_name(modality);
  NodeRef conv = graph.conv1d_grouped(x, bound.at(stack + ".convpos.w"),
                                      bound.at(stack + ".convpos.b"),
                                      config_.conv_pos_kernel,
                                      config_.conv_pos_groups);
  return graph.add(x, graph.gelu(conv));
}

NodeRef Model::transformer_layer(Graph& graph, const Bound& bound, NodeRef x,
                                 const std::string& prefix,
                                 std::vector<NodeRef>* attention_rows) const {
  std::size_t frames = graph.value(x).rows();
  std::size_t d = config_.model_dim;
  std::size_t heads = config_.heads;
  std::size_t head_dim = d / heads;

  // Pre-norm self-attention with the bucketed relative position bias.
  NodeRef y = affine_layer_norm(graph, bound, x, prefix + ".ln1");
  NodeRef q = graph.add(graph.matmul(y, bound.at(prefix + ".attn.q.w")),
                        bound.at(prefix + ".attn.q.b"));
  NodeRef k = graph.matmul(y, bound.at(prefix + ".attn.k.w"));
  NodeRef v = graph.add(graph.matmul(y, bound.at(prefix + ".attn.v.w")),
                        bound.at(prefix + ".attn.v.b"));

  NodeRef bias_rows;  // [frames*frames, heads]
  if (config_.use_rel_bias) {
    std::vector<std::size_t> buckets;
    buckets.reserve(frames * frames);
    for (std::size_t i = 0; i < frames; ++i) {
      for (std::size_t j = 0; j < frames; ++j) {
        buckets.push_back(relative_bucket(static_cast<long>(i),
                                          static_cast<long>(j),
                                          config_.rel_bias_buckets,
                                          config_.rel_bias_max_distance));
      }
    }
    bias_rows = graph.gather_rows(bound.at(prefix + ".attn.bias"), buckets);
  }

  NodeRef context;
  for (std::size_t h = 0; h < heads; ++h) {
    NodeRef qh = graph.slice(q, 0, frames, h * head_dim, (h + 1) * head_dim);
    NodeRef kh = graph.slice(k, 0, frames, h * head_dim, (h + 1) * head_dim);
    NodeRef vh = graph.slice(v, 0, frames, h * head_dim, (h + 1) * head_dim);
    NodeRef scores = graph.scale(graph.matmul(qh, graph.transpose(kh)),
                                 1.0 / std::sqrt(static_cast<double>(head_dim)));
    if (config_.use_rel_bias) {
      NodeRef bias_col = graph.slice(bias_rows, 0, frames * frames, h, h + 1);
      scores = graph.add(scores, graph.reshape(bias_col, {frames, frames}));
    }
    NodeRef attn = graph.softmax(scores);
    if (attention_rows) attention_rows->push_back(attn);
    NodeRef ctx = graph.matmul(attn, vh);
    context = h == 0 ? ctx : graph.concat(context, ctx, 1);
  }
  NodeRef attn_out = graph.add(graph.matmul(context, bound.at(prefix + ".attn.o.w")),
                               bound.at(prefix + ".attn.o.b"));
  x = graph.add(x, attn_out);

  // Pre-norm feed-forward.
  NodeRef z = affine_layer_norm(graph, bound, x, prefix + ".ln2");
  NodeRef hidden = graph.gelu(graph.add(graph.matmul(z, bound.at(prefix + ".ffn.in.w")),
                                        bound.at(prefix + ".ffn.in.b")));
  NodeRef ffn_out = graph.add(graph.matmul(hidden, bound.at(prefix + ".ffn.out.w")),
                              bound.at(prefix + ".ffn.out.b"));
  return graph.add(x, ffn_out);
}

std::size_t Model::private_layers(Modality modality) const {
  return modality == Modality::kSpeech ? config_.layers_speech
                                       : config_.layers_text;
}

Model::StackOut Model::encode_private(Graph& graph, const Bound& bound,
                                      NodeRef x, Modality modality) const {
  StackOut out;
  std::size_t layers = private_layers(modality);
  if (layers == 0) {
    out.out = x;  // empty stack: output equals the projected input
    return out;
  }
  if (config_.use_conv_pos &&
      (modality == Modality::kSpeech || config_.conv_pos_text)) {
    x = conv_positional(graph, bound, x, modality);
  }
  const std::string stack = modality_name(modality);
  for (std::size_t i = 0; i < layers; ++i) {
    x = transformer_layer(graph, bound, x, stack + ".layer" + std::to_string(i),
                          &out.attention_rows);
    out.captured.push_back(x);
  }
  out.out = x;
  return out;
}

Model::StackOut Model::encode_shared(Graph& graph, const Bound& bound,
                                     NodeRef x) const {
  StackOut out;
  for (std::size_t i = 0; i < config_.layers_shared; ++i) {
    x = transformer_layer(graph, bound, x, "shared.layer" + std::to_string(i),
                          &out.attention_rows);
    if (i + 1 == config_.layers_shared) {
      x = affine_layer_norm(graph, bound, x, "shared.ln_out");
    }
    out.captured.push_back(x);
  }
  out.out = x;
  return out;
}

NodeRef Model::char_logits(Graph& graph, const Bound& bound,
                           NodeRef h_shared) const {
  NodeRef x = h_shared;
  for (std::size_t i = 0; i < config_.layers_char; ++i) {
    x = transformer_layer(graph, bound, x, "char.layer" + std::to_string(i),
                          nullptr);
  }
  return graph.add(graph.matmul(x, bound.at("char.head.w")),
                   bound.at("char.head.b"));
}

NodeRef Model::phoneme_logits(Graph& graph, const Bound& bound, NodeRef h) const {
  return graph.add(graph.matmul(h, bound.at("mlm.head.w")),
                   bound.at("mlm.head.b"));
}

HubertHeadRefs Model::hubert_head(const Bound& bound) const {
  return {bound.at("hubert.proj"), bound.at("hubert.codewords"),
          config_.hubert_temperature};
}

// ---------------------------------------------------------------------------
// Value-side helpers
// ---------------------------------------------------------------------------

Tensor Model::embed_speech_values(const Tensor& features) const {
  Graph graph;
  Bound bound = bind(graph, false);
  NodeRef out = embed_speech(graph, bound, features);
  graph.forward();
  return graph.value(out);
}

Tensor Model::embed_text_values(std::span<const int> phoneme_ids) const {
  Graph graph;
  Bound bound = bind(graph, false);
  NodeRef out = embed_text(graph, bound, phoneme_ids);
  graph.forward();
  return graph.value(out);
}

Tensor Model::conv_positional_values(const Tensor& frames,
                                     Modality modality) const {
  Graph graph;
  Bound bound = bind(graph, false);
  NodeRef x = graph.input("frames", frames);
  NodeRef out = conv_positional(graph, bound, x, modality);
  graph.forward();
  return graph.value(out);
}

const Tensor& Model::mask_embedding(Modality modality) const {
  return params_.at(std::string("mask_embed.") + modality_name(modality));
}

HiddenStates Model::encode(const Tensor& embedded, Modality modality,
                           std::span<const std::size_t> mask) const {
  if (embedded.ndim() != 2 || embedded.cols() != config_.model_dim) {
    throw ShapeError("encode: input must be [T, model_dim]");
  }
  if (embedded.rows() == 0) throw Error("encode: empty input");
  Graph graph;
  Bound bound = bind(graph, false);
  NodeRef x = graph.input("embedded", embedded);
  StackOut priv = encode_private(graph, bound, x, modality);
  StackOut shared = encode_shared(graph, bound, priv.out);
  graph.forward();

  HiddenStates states;
  states.modality = modality;
  states.mask_positions.assign(mask.begin(), mask.end());
  states.per_layer.push_back(graph.value(x));
  for (NodeRef layer : priv.captured) states.per_layer.push_back(graph.value(layer));
  for (NodeRef layer : shared.captured) states.per_layer.push_back(graph.value(layer));
  return states;
}

std::size_t Model::private_out_index(Modality modality) const {
  return private_layers(modality);
}

std::size_t Model::shared_mid_index(Modality modality) const {
  return private_layers(modality) + (config_.layers_shared + 1) / 2;
}

std::size_t Model::shared_out_index(Modality modality) const {
  return private_layers(modality) + config_.layers_shared;
}

}  // namespace speechtext

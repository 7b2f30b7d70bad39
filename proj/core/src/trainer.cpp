// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "speechtext/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

#include "speechtext/common.hpp"
#include "speechtext/decode.hpp"

namespace speechtext {

namespace {

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng) {
  for (std::size_t i = indices.size(); i > 1; --i) {
    std::size_t j = rng.uniform_index(i);
    std::swap(indices[i - 1], indices[j]);
  }
}

// Greedy frame-budget packing; every batch holds at least one item.
std::vector<std::vector<std::size_t>> pack_by_frames(
    const std::vector<std::size_t>& order,
    const std::vector<std::size_t>& frames, std::size_t budget) {
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  std::size_t used = 0;
  for (std::size_t idx : order) {
    std::size_t f = frames[idx];
    if (!current.empty() && used + f > budget) {
      batches.push_back(std::move(current));
      current.clear();
      used = 0;
    }
    current.push_back(idx);
    used += f;
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

double lr_linear(std::size_t step, std::size_t warmup, std::size_t total,
                 double peak) {
  if (step <= warmup) {
    return warmup == 0 ? peak
                       : peak * static_cast<double>(step) /
                             static_cast<double>(warmup);
  }
  if (step >= total) return 0.0;
  return peak * static_cast<double>(total - step) /
         static_cast<double>(total - warmup);
}

double lr_tristage(std::size_t step, std::size_t total, double warm_frac,
                   double hold_frac, double peak, double floor_ratio) {
  double s = static_cast<double>(step);
  double warm_end = warm_frac * static_cast<double>(total);
  double hold_end = (warm_frac + hold_frac) * static_cast<double>(total);
  if (s <= warm_end) {
    return warm_end == 0.0 ? peak : peak * (s / warm_end);
  }
  if (s <= hold_end) return peak;
  if (step >= total) return floor_ratio * peak;
  double progress = (s - hold_end) / (static_cast<double>(total) - hold_end);
  return peak * (1.0 - (1.0 - floor_ratio) * progress);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void AdamOptimizer::step(std::map<std::string, Tensor>& params,
                         const std::map<std::string, Tensor>& grads,
                         double lr) {
  ++t_;
  double norm_sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data()) norm_sq += v * v;
  }
  double norm = std::sqrt(norm_sq);
  double clip_scale = 1.0;
  if (hyper_.clip_norm > 0.0 && norm > hyper_.clip_norm) {
    clip_scale = hyper_.clip_norm / norm;
  }
  double bias1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
  double bias2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    auto pit = params.find(name);
    if (pit == params.end()) {
      throw Error("AdamOptimizer: gradient for unknown parameter '" + name + "'");
    }
    Tensor& p = pit->second;
    Tensor& m = m_.try_emplace(name, Tensor(p.shape())).first->second;
    Tensor& v = v_.try_emplace(name, Tensor(p.shape())).first->second;
    for (std::size_t k = 0; k < p.numel(); ++k) {
      double grad = g.at(k) * clip_scale;
      m.at(k) = hyper_.beta1 * m.at(k) + (1.0 - hyper_.beta1) * grad;
      v.at(k) = hyper_.beta2 * v.at(k) + (1.0 - hyper_.beta2) * grad * grad;
      double m_hat = m.at(k) / bias1;
      double v_hat = v.at(k) / bias2;
      double update = lr * m_hat / (std::sqrt(v_hat) + hyper_.eps);
      if (hyper_.weight_decay > 0.0) {
        update += lr * hyper_.weight_decay * p.at(k);
      }
      p.at(k) -= update;
    }
  }
}

// ---------------------------------------------------------------------------
// Task scheduling
// ---------------------------------------------------------------------------

const char* task_name(Task task) {
  switch (task) {
    case Task::kSpeech: return "speech";
    case Task::kText: return "text";
    case Task::kPaired: return "paired";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (warmup_steps > steps) {
    throw ConfigError("TrainConfig: warmup_steps must not exceed steps");
  }
  if (peak_lr <= 0.0) throw ConfigError("TrainConfig: peak_lr must be positive");
  if (batch_frames == 0) {
    throw ConfigError("TrainConfig: batch_frames must be positive");
  }
  if (paired_fraction < 0.0 || paired_fraction > 1.0) {
    throw ConfigError("TrainConfig: paired_fraction must lie in [0, 1]");
  }
  speech_mask.validate();
  text_mask.validate();
}

TrainConfig train_config_from(const Config& config) {
  TrainConfig out;
  out.steps = config.get_size("train.steps");
  out.warmup_steps = config.get_size("train.warmup_steps");
  out.peak_lr = config.get_double("train.peak_lr");
  out.batch_frames = config.get_size("train.batch_frames");
  out.ctc_start_step = config.get_size("train.ctc_start_step");
  out.enable_mlm = config.get_bool("train.enable_mlm");
  out.enable_ctc = config.get_bool("train.enable_ctc");
  out.paired_fraction = config.get_double("train.paired_fraction");
  std::string align = config.get_string("paired.align");
  if (align == "swap") {
    out.align_mode = TrainConfig::AlignMode::kSwap;
  } else if (align == "ce_loss") {
    out.align_mode = TrainConfig::AlignMode::kCeLoss;
  } else if (align == "cross_attention") {
    out.align_mode = TrainConfig::AlignMode::kCrossAttention;
  } else {
    throw ConfigError("paired.align must be swap | ce_loss | cross_attention");
  }
  out.swap_prob = config.get_double("paired.swap_prob");
  out.speech_mask = {config.get_double("mask.speech_prob"),
                     config.get_size("mask.speech_span")};
  out.text_mask = {config.get_double("mask.text_prob"),
                   config.get_size("mask.text_span")};
  out.sil_rate = config.get_double("text.sil_rate");
  std::string oov = config.get_string("text.oov_policy");
  if (oov == "skip") {
    out.oov_policy = OovPolicy::kSkipUtterance;
  } else if (oov == "spell") {
    out.oov_policy = OovPolicy::kSpellOut;
  } else {
    throw ConfigError("text.oov_policy must be skip | spell");
  }
  out.adam = {config.get_double("train.adam_beta1"),
              config.get_double("train.adam_beta2"),
              config.get_double("train.adam_eps"),
              config.get_double("train.weight_decay"),
              config.get_double("train.clip_norm")};
  out.seed = static_cast<std::uint64_t>(config.get_int("train.seed"));
  out.validate();
  return out;
}

ModelConfig model_config_from(const Config& config) {
  ModelConfig out;
  out.model_dim = config.get_size("model.dim");
  out.inner_dim = config.get_size("model.inner_dim");
  out.heads = config.get_size("model.heads");
  out.layers_speech = config.get_size("model.layers_speech");
  out.layers_text = config.get_size("model.layers_text");
  out.layers_shared = config.get_size("model.layers_shared");
  out.layers_char = config.get_size("model.layers_char");
  out.conv_pos_kernel = config.get_size("model.conv_pos_kernel");
  out.conv_pos_groups = config.get_size("model.conv_pos_groups");
  out.conv_pos_text = config.get_bool("model.conv_pos_text");
  out.use_conv_pos = config.get_bool("model.use_conv_pos");
  out.use_rel_bias = config.get_bool("model.use_rel_bias");
  out.rel_bias_buckets = config.get_size("model.rel_bias_buckets");
  out.rel_bias_max_distance = config.get_size("model.rel_bias_max_distance");
  out.speech_feature_dim = config.get_size("model.feature_dim");
  out.hubert_dim = config.get_size("model.hubert_dim");
  out.hubert_temperature = config.get_double("model.hubert_temperature");
  out.codeword_count = config.get_size("model.codewords");
  return out;
}

std::vector<BatchDescriptor> schedule_tasks(
    const PretrainData& data, const TrainConfig& config,
    std::span<const std::size_t> paired_subset, std::size_t epoch) {
  if (data.speech == nullptr || data.speech->items.empty()) {
    throw Error("schedule_tasks: speech manifest is empty");
  }
  Rng rng = Rng(config.seed).fork(0x5C4ED000ULL + epoch);

  std::vector<BatchDescriptor> out;

  // All speech batches.
  std::vector<std::size_t> speech_order(data.speech->items.size());
  std::vector<std::size_t> speech_frames(data.speech->items.size());
  for (std::size_t i = 0; i < speech_order.size(); ++i) {
    speech_order[i] = i;
    speech_frames[i] = data.speech->items[i].frames;
  }
  shuffle_indices(speech_order, rng);
  auto speech_batches =
      pack_by_frames(speech_order, speech_frames, config.batch_frames);
  for (auto& batch : speech_batches) {
    out.push_back({Task::kSpeech, std::move(batch)});
  }
  std::size_t speech_batch_count = speech_batches.size();

  // The same number of sampled text batches.
  bool text_enabled = config.enable_mlm || config.enable_ctc;
  if (text_enabled) {
    if (data.text == nullptr || data.text->empty()) {
      throw Error("schedule_tasks: text task enabled but the corpus is empty");
    }
    // Frame estimate per line: token count times the pooled mean duration.
    double mean_duration = 1.0;
    {
      double acc = 0.0, mass = 0.0;
      for (const auto& [len, p] : data.durations->entry(Lexicon::kSilId).lengths) {
        acc += static_cast<double>(len) * p;
        mass += p;
      }
      if (mass > 0.0) mean_duration = acc / mass;
    }
    std::vector<std::size_t> usable;
    std::vector<std::size_t> estimates;
    for (std::size_t line = 0; line < data.text->size(); ++line) {
      try {
        PhonemizedText ph =
            phonemize((*data.text)[line], *data.lexicon, config.oov_policy);
        std::size_t tokens = ph.phonemes.size() + 2;
        estimates.push_back(static_cast<std::size_t>(
            std::ceil(static_cast<double>(tokens) * mean_duration)));
        usable.push_back(line);
      } catch (const OovError&) {
        // Skip-utterance policy: the line never enters scheduling.
      }
    }
    if (usable.empty()) {
      throw Error("schedule_tasks: no usable text lines after OOV filtering");
    }
    for (std::size_t b = 0; b < speech_batch_count; ++b) {
      BatchDescriptor batch;
      batch.task = Task::kText;
      std::size_t used = 0;
      while (true) {
        std::size_t pick = rng.uniform_index(usable.size());
        std::size_t cost = estimates[pick];
        if (!batch.items.empty() && used + cost > config.batch_frames) break;
        batch.items.push_back(usable[pick]);
        used += cost;
        if (used >= config.batch_frames) break;
      }
      out.push_back(std::move(batch));
    }
  }

  // The complete paired subset.
  if (!paired_subset.empty()) {
    if (data.paired == nullptr || data.alignments == nullptr) {
      throw Error("schedule_tasks: paired task enabled without paired data");
    }
    std::vector<std::size_t> paired_order(paired_subset.begin(),
                                          paired_subset.end());
    shuffle_indices(paired_order, rng);
    std::vector<std::size_t> paired_frames(data.paired->items.size());
    for (std::size_t i = 0; i < paired_frames.size(); ++i) {
      paired_frames[i] = data.paired->items[i].frames;
    }
    for (auto& batch :
         pack_by_frames(paired_order, paired_frames, config.batch_frames)) {
      out.push_back({Task::kPaired, std::move(batch)});
    }
  }

  // Deterministic interleave.
  std::vector<std::size_t> order(out.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_indices(order, rng);
  std::vector<BatchDescriptor> interleaved;
  interleaved.reserve(out.size());
  for (std::size_t i : order) interleaved.push_back(std::move(out[i]));
  return interleaved;
}

std::string format_step_record(const StepRecord& record) {
  std::string line = std::to_string(record.step);
  line += '\t';
  line += task_name(record.task);
  line += '\t';
  line += format_double(record.loss);
  line += '\t';
  line += format_double(record.lr);
  for (const auto& [name, value] : record.components) {
    line += '\t';
    line += name;
    line += '=';
    line += format_double(value);
  }
  return line;
}

// ---------------------------------------------------------------------------
// Pretrainer
// ---------------------------------------------------------------------------

namespace {

void accumulate_param_grads(const Graph& graph,
                            const std::map<std::string, Tensor>& params,
                            std::map<std::string, Tensor>& grads,
                            double scale) {
  for (const auto& [name, tensor] : params) {
    NodeRef ref = graph.find_input("param:" + name);
    const Tensor& g = graph.grad(ref);
    Tensor& slot = grads.try_emplace(name, Tensor(tensor.shape())).first->second;
    for (std::size_t k = 0; k < slot.numel(); ++k) {
      slot.at(k) += g.at(k) * scale;
    }
  }
}

}  // namespace

Tensor char_log_probs(const Model& model, const Tensor& features,
                      bool use_char_layer) {
  Graph graph;
  Model::Bound bound = model.bind(graph, false);
  NodeRef x = model.embed_speech(graph, bound, features);
  Model::StackOut priv = model.encode_private(graph, bound, x, Modality::kSpeech);
  Model::StackOut shared = model.encode_shared(graph, bound, priv.out);
  NodeRef logits;
  if (use_char_layer) {
    logits = model.char_logits(graph, bound, shared.out);
  } else {
    logits = graph.add(graph.matmul(shared.out, bound.at("char.head.w")),
                       bound.at("char.head.b"));
  }
  NodeRef logp = graph.sub(logits, graph.logsumexp_rows(logits));
  graph.forward();
  return graph.value(logp);
}

CharVocab build_char_vocab(const std::vector<std::string>* text,
                           const Manifest* manifest) {
  std::vector<std::string> sources;
  if (text) {
    for (const std::string& line : *text) {
      std::vector<std::string> words = normalize_words(line);
      std::string joined;
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) joined += ' ';
        joined += words[i];
      }
      sources.push_back(joined);
    }
  }
  if (manifest) {
    for (const Utterance& utt : manifest->items) {
      if (!utt.transcript.empty()) sources.push_back(utt.transcript);
    }
  }
  return CharVocab::build(sources);
}

Pretrainer::Pretrainer(Model& model, const TrainConfig& config,
                       const PretrainData& data)
    : model_(model),
      config_(config),
      data_(data),
      char_vocab_(CharVocab::from_chars({"<blank>"})),
      optimizer_(config.adam),
      rng_(Rng(config.seed).fork(0x7EA1ULL)) {
  config_.validate();
  if (data_.speech == nullptr || data_.labels == nullptr ||
      data_.lexicon == nullptr || data_.durations == nullptr) {
    throw Error("Pretrainer: missing speech, labels, lexicon or durations");
  }
  if (config_.paired_fraction > 0.0 &&
      config_.align_mode == TrainConfig::AlignMode::kCrossAttention) {
    throw UnsupportedError(
        "Pretrainer: alignment function 'cross_attention' is recognized but "
        "not implemented; use swap or ce_loss");
  }

  char_vocab_ = build_char_vocab(data_.text, data_.speech);
  if (model_.config().char_vocab != char_vocab_.size()) {
    throw ConfigError("Pretrainer: model char_vocab " +
                      std::to_string(model_.config().char_vocab) +
                      " does not match corpus vocabulary " +
                      std::to_string(char_vocab_.size()));
  }
  if (model_.config().phoneme_vocab != data_.lexicon->inventory().size()) {
    throw ConfigError("Pretrainer: model phoneme_vocab does not match the lexicon");
  }

  // Fixed paired subset for the whole run.
  if (config_.paired_fraction > 0.0 && data_.paired != nullptr &&
      !data_.paired->items.empty()) {
    if (data_.alignments == nullptr) {
      throw Error("Pretrainer: paired manifest without alignments");
    }
    std::vector<std::size_t> all(data_.paired->items.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    Rng subset_rng = Rng(config_.seed).fork(0x9A12EDULL);
    shuffle_indices(all, subset_rng);
    std::size_t keep = static_cast<std::size_t>(
        std::ceil(config_.paired_fraction * static_cast<double>(all.size())));
    keep = std::min(keep, all.size());
    paired_subset_.assign(all.begin(), all.begin() + keep);
    std::sort(paired_subset_.begin(), paired_subset_.end());
  }
}

const Tensor& Pretrainer::features_of(const Manifest& manifest,
                                      std::size_t item) {
  const Utterance& utt = manifest.items[item];
  auto it = feature_cache_.find(utt.id);
  if (it != feature_cache_.end()) return it->second;
  Tensor features = load_features(manifest.resolve(utt));
  if (features.rows() != utt.frames) {
    throw Error("Pretrainer: feature file for '" + utt.id + "' has " +
                std::to_string(features.rows()) + " frames, manifest says " +
                std::to_string(utt.frames));
  }
  return feature_cache_.emplace(utt.id, std::move(features)).first->second;
}

LossBundle Pretrainer::speech_utterance_loss(Graph& graph,
                                             const Model::Bound& bound,
                                             std::size_t item, Rng& rng) {
  const Utterance& utt = data_.speech->items[item];
  const Tensor& features = features_of(*data_.speech, item);
  auto label_it = data_.labels->find(utt.id);
  if (label_it == data_.labels->end()) {
    throw Error("Pretrainer: no labels for utterance '" + utt.id + "'");
  }
  const std::vector<int>& labels = label_it->second;
  if (labels.size() != features.rows()) {
    throw Error("Pretrainer: label length mismatch for '" + utt.id + "'");
  }
  MaskSample mask = sample_mask(features.rows(), config_.speech_mask, rng);
  LossBundle bundle;
  if (mask.positions.empty()) return bundle;

  NodeRef x = model_.embed_speech(graph, bound, features);
  x = model_.replace_masked(graph, bound, x, mask.positions, Modality::kSpeech);
  Model::StackOut priv = model_.encode_private(graph, bound, x, Modality::kSpeech);
  Model::StackOut shared = model_.encode_shared(graph, bound, priv.out);
  auto result = hubert_loss(graph, shared.out, labels, mask.positions,
                            model_.hubert_head(bound),
                            model_.config().codeword_count);
  graph.forward();
  graph.backward(result.loss);
  bundle.hubert = graph.value(result.loss).at(0);
  bundle.hubert_count = result.count;
  return bundle;
}

LossBundle Pretrainer::text_line_loss(Graph& graph, const Model::Bound& bound,
                                      std::size_t line, Rng& rng,
                                      bool ctc_active) {
  LossBundle bundle;
  PhonemizedText phonemized;
  try {
    phonemized = phonemize((*data_.text)[line], *data_.lexicon, config_.oov_policy);
  } catch (const OovError&) {
    return bundle;
  }
  SilInsertedText with_sil = insert_sil(phonemized, config_.sil_rate, rng);
  UpsampledText upsampled = upsample(with_sil, *data_.durations, rng);
  const std::vector<int>& frames = upsampled.frames;
  MaskSample mask = sample_mask(frames.size(), config_.text_mask, rng);

  bool want_mlm = config_.enable_mlm && !mask.positions.empty();
  bool want_ctc = config_.enable_ctc && ctc_active;
  if (!want_mlm && !want_ctc) return bundle;

  NodeRef x = model_.embed_text(graph, bound, frames);
  x = model_.replace_masked(graph, bound, x, mask.positions, Modality::kText);
  Model::StackOut priv = model_.encode_private(graph, bound, x, Modality::kText);
  Model::StackOut shared = model_.encode_shared(graph, bound, priv.out);

  NodeRef total;
  if (want_mlm) {
    NodeRef mlm = mlm_loss(graph, shared.out, frames, mask.positions,
                           bound.at("mlm.head.w"), bound.at("mlm.head.b"),
                           model_.config().phoneme_vocab);
    bundle.mlm_count = mask.positions.size();
    total = mlm;
  }
  std::optional<NodeRef> ctc_node;
  if (want_ctc) {
    std::vector<std::string> words = normalize_words((*data_.text)[line]);
    std::string joined;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) joined += ' ';
      joined += words[i];
    }
    std::vector<int> chars = char_vocab_.encode(joined);
    NodeRef logits = model_.char_logits(graph, bound, shared.out);
    NodeRef ctc = ctc_loss(graph, logits, chars);
    bundle.ctc_count = chars.size();
    ctc_node = ctc;
    total = total.valid() ? graph.add(total, ctc) : ctc;
  }
  graph.forward();
  graph.backward(total);
  if (want_mlm) {
    // total - ctc recovers the mlm part for reporting.
    double total_value = graph.value(total).at(0);
    double ctc_value = ctc_node ? graph.value(*ctc_node).at(0) : 0.0;
    bundle.mlm = total_value - ctc_value;
    bundle.ctc = ctc_value;
  } else if (ctc_node) {
    bundle.ctc = graph.value(*ctc_node).at(0);
  }
  return bundle;
}

LossBundle Pretrainer::paired_utterance_loss(Graph& graph,
                                             const Model::Bound& bound,
                                             std::size_t item, Rng& rng) {
  const Utterance& utt = data_.paired->items[item];
  const Tensor& features = features_of(*data_.paired, item);
  auto align_it = data_.alignments->find(utt.id);
  if (align_it == data_.alignments->end()) {
    throw Error("Pretrainer: no alignment for utterance '" + utt.id + "'");
  }
  const Alignment& alignment = align_it->second;
  if (alignment.frames() != features.rows()) {
    throw Error("Pretrainer: alignment frames mismatch for '" + utt.id + "'");
  }
  auto label_it = data_.labels->find(utt.id);
  if (label_it == data_.labels->end()) {
    throw Error("Pretrainer: no labels for paired utterance '" + utt.id + "'");
  }
  const std::vector<int>& labels = label_it->second;

  MaskSample mask = sample_mask(features.rows(), config_.speech_mask, rng);
  LossBundle bundle;
  if (mask.positions.empty()) return bundle;

  // Speech side, masked before its private encoder.
  NodeRef xs = model_.embed_speech(graph, bound, features);
  xs = model_.replace_masked(graph, bound, xs, mask.positions, Modality::kSpeech);
  Model::StackOut speech = model_.encode_private(graph, bound, xs, Modality::kSpeech);

  // Text side from the forced alignment, never masked.
  std::vector<int> phonemes = frame_phonemes(alignment);
  NodeRef xt = model_.embed_text(graph, bound, phonemes);
  Model::StackOut text = model_.encode_private(graph, bound, xt, Modality::kText);

  NodeRef into_shared = speech.out;
  std::optional<NodeRef> ce_node;
  if (config_.align_mode == TrainConfig::AlignMode::kSwap) {
    SwapPlan plan = plan_swap(alignment, mask.positions, config_.swap_prob, rng);
    into_shared = swap_representations(graph, speech.out, text.out, plan);
  } else if (config_.align_mode == TrainConfig::AlignMode::kCeLoss) {
    std::vector<std::size_t> unmasked =
        unmasked_positions(features.rows(), mask.positions);
    ce_node = ce_alignment_loss(graph, speech.out, text.out, unmasked);
    bundle.ce_count = unmasked.size();
  } else {
    throw UnsupportedError(
        "pretrain_step: alignment function 'cross_attention' is recognized "
        "but not implemented");
  }

  Model::StackOut shared = model_.encode_shared(graph, bound, into_shared);
  auto result = hubert_loss(graph, shared.out, labels, mask.positions,
                            model_.hubert_head(bound),
                            model_.config().codeword_count);
  NodeRef total = ce_node ? graph.add(result.loss, *ce_node) : result.loss;
  graph.forward();
  graph.backward(total);
  bundle.hubert = graph.value(result.loss).at(0);
  bundle.hubert_count = result.count;
  if (ce_node) bundle.ce_align = graph.value(*ce_node).at(0);
  return bundle;
}

LossBundle Pretrainer::batch_losses(const BatchDescriptor& batch, Rng& rng,
                                    std::map<std::string, Tensor>* grads,
                                    bool ctc_active) {
  LossBundle total;
  double scale = 1.0 / static_cast<double>(batch.items.size());
  for (std::size_t item : batch.items) {
    Graph graph;
    Model::Bound bound = model_.bind(graph, grads != nullptr);
    LossBundle one;
    switch (batch.task) {
      case Task::kSpeech:
        one = speech_utterance_loss(graph, bound, item, rng);
        break;
      case Task::kText:
        one = text_line_loss(graph, bound, item, rng, ctc_active);
        break;
      case Task::kPaired:
        one = paired_utterance_loss(graph, bound, item, rng);
        break;
    }
    bool contributed = one.hubert_count + one.mlm_count + one.ctc_count +
                           one.ce_count > 0;
    if (!one.finite()) {
      throw Error(std::string("pretrain_step: non-finite loss on task ") +
                  task_name(batch.task) + " item " + std::to_string(item) +
                  " (hubert=" + format_double(one.hubert) +
                  " mlm=" + format_double(one.mlm) +
                  " ctc=" + format_double(one.ctc) +
                  " ce=" + format_double(one.ce_align) + ")");
    }
    if (contributed && grads != nullptr) {
      accumulate_param_grads(graph, model_.parameters(), *grads, scale);
    }
    total.hubert += one.hubert * scale;
    total.mlm += one.mlm * scale;
    total.ctc += one.ctc * scale;
    total.ce_align += one.ce_align * scale;
    total.hubert_count += one.hubert_count;
    total.mlm_count += one.mlm_count;
    total.ctc_count += one.ctc_count;
    total.ce_count += one.ce_count;
  }
  return total;
}

void Pretrainer::refill_schedule() {
  schedule_ = schedule_tasks(data_, config_, paired_subset_, epoch_);
  schedule_pos_ = 0;
  ++epoch_;
}

StepRecord Pretrainer::run_step() {
  if (schedule_pos_ >= schedule_.size()) refill_schedule();
  const BatchDescriptor& batch = schedule_[schedule_pos_++];
  std::size_t step = step_count_ + 1;
  bool ctc_active = config_.enable_ctc && step >= config_.ctc_start_step;

  std::map<std::string, Tensor> grads;
  LossBundle bundle = batch_losses(batch, rng_, &grads, ctc_active);
  double lr = lr_linear(step, config_.warmup_steps, config_.steps, config_.peak_lr);
  if (!grads.empty()) {
    optimizer_.step(model_.mutable_parameters(), grads, lr);
  }
  step_count_ = step;

  StepRecord record;
  record.step = step;
  record.task = batch.task;
  record.loss = bundle.total();
  record.lr = lr;
  switch (batch.task) {
    case Task::kSpeech:
      record.components.emplace_back("hubert", bundle.hubert);
      break;
    case Task::kText:
      if (config_.enable_mlm) record.components.emplace_back("mlm", bundle.mlm);
      if (ctc_active) record.components.emplace_back("ctc", bundle.ctc);
      break;
    case Task::kPaired:
      record.components.emplace_back("hubert", bundle.hubert);
      if (config_.align_mode == TrainConfig::AlignMode::kCeLoss) {
        record.components.emplace_back("ce", bundle.ce_align);
      }
      break;
  }
  history_.push_back(record);
  return record;
}

void Pretrainer::run(std::ostream* log) {
  while (step_count_ < config_.steps) {
    StepRecord record = run_step();
    if (log) *log << format_step_record(record) << '\n';
  }
}

double Pretrainer::eval_combined_loss(std::uint64_t eval_seed, bool include_ctc) {
  Rng rng = Rng(eval_seed).fork(0xE7A1ULL);
  double combined = 0.0;

  {
    BatchDescriptor all;
    all.task = Task::kSpeech;
    for (std::size_t i = 0; i < data_.speech->items.size(); ++i) {
      all.items.push_back(i);
    }
    combined += batch_losses(all, rng, nullptr, false).total();
  }
  if ((config_.enable_mlm || (config_.enable_ctc && include_ctc)) &&
      data_.text != nullptr && !data_.text->empty()) {
    BatchDescriptor all;
    all.task = Task::kText;
    for (std::size_t i = 0; i < data_.text->size(); ++i) all.items.push_back(i);
    combined += batch_losses(all, rng, nullptr, include_ctc).total();
  }
  if (!paired_subset_.empty()) {
    BatchDescriptor all;
    all.task = Task::kPaired;
    all.items = paired_subset_;
    combined += batch_losses(all, rng, nullptr, false).total();
  }
  return combined;
}

// ---------------------------------------------------------------------------
// Finetuner
// ---------------------------------------------------------------------------

void FinetuneConfig::validate() const {
  if (std::abs(warm_frac + hold_frac + decay_frac - 1.0) > 1e-9) {
    throw ConfigError("FinetuneConfig: stage fractions must sum to 1");
  }
  if (peak_lr <= 0.0) throw ConfigError("FinetuneConfig: peak_lr must be positive");
  if (steps == 0) throw ConfigError("FinetuneConfig: steps must be positive");
  if (floor_ratio < 0.0 || floor_ratio > 1.0) {
    throw ConfigError("FinetuneConfig: floor_ratio must lie in [0, 1]");
  }
}

FinetuneConfig finetune_config_from(const Config& config) {
  FinetuneConfig out;
  out.steps = config.get_size("finetune.steps");
  out.peak_lr = config.get_double("finetune.peak_lr");
  out.warm_frac = config.get_double("finetune.warm_frac");
  out.hold_frac = config.get_double("finetune.hold_frac");
  out.decay_frac = config.get_double("finetune.decay_frac");
  out.floor_ratio = config.get_double("finetune.floor_ratio");
  out.use_char_layer = config.get_bool("finetune.use_char_layer");
  out.use_char_head = config.get_bool("finetune.use_char_head");
  out.batch_frames = config.get_size("finetune.batch_frames");
  out.adam = {config.get_double("train.adam_beta1"),
              config.get_double("train.adam_beta2"),
              config.get_double("train.adam_eps"),
              config.get_double("train.weight_decay"),
              config.get_double("train.clip_norm")};
  out.seed = static_cast<std::uint64_t>(config.get_int("finetune.seed"));
  out.validate();
  return out;
}

Finetuner::Finetuner(Model& model, const FinetuneConfig& config,
                     const Manifest& labeled, const CharVocab& chars)
    : model_(model),
      config_(config),
      labeled_(labeled),
      chars_(chars),
      optimizer_(config.adam),
      rng_(Rng(config.seed).fork(0xF17EULL)) {
  config_.validate();
  if (labeled_.items.empty()) {
    throw Error("Finetuner: labeled manifest is empty");
  }
  for (const Utterance& utt : labeled_.items) {
    if (utt.transcript.empty()) {
      throw Error("Finetuner: utterance '" + utt.id + "' has no transcript");
    }
  }
  Rng init_rng = Rng(config_.seed).fork(0xC4A6ULL);
  if (config_.use_char_layer) model_.ensure_char_parameters(init_rng);
  if (!config_.use_char_head) model_.reinit_char_head(init_rng);
  if (!model_.has_parameter("char.head.w")) model_.reinit_char_head(init_rng);
}

Tensor Finetuner::char_log_probs(const Tensor& features) {
  return speechtext::char_log_probs(model_, features, config_.use_char_layer);
}

StepRecord Finetuner::run_step() {
  if (batch_pos_ >= batches_.size()) {
    std::vector<std::size_t> order(labeled_.items.size());
    std::vector<std::size_t> frames(labeled_.items.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      order[i] = i;
      frames[i] = labeled_.items[i].frames;
    }
    shuffle_indices(order, rng_);
    batches_ = pack_by_frames(order, frames, config_.batch_frames);
    batch_pos_ = 0;
  }
  const std::vector<std::size_t>& batch = batches_[batch_pos_++];
  std::size_t step = step_count_ + 1;

  std::map<std::string, Tensor> grads;
  double scale = 1.0 / static_cast<double>(batch.size());
  double loss_total = 0.0;
  for (std::size_t item : batch) {
    const Utterance& utt = labeled_.items[item];
    auto cache_it = feature_cache_.find(utt.id);
    if (cache_it == feature_cache_.end()) {
      cache_it = feature_cache_
                     .emplace(utt.id, load_features(labeled_.resolve(utt)))
                     .first;
    }
    const Tensor& features = cache_it->second;
    std::vector<int> targets = chars_.encode(utt.transcript);

    Graph graph;
    Model::Bound bound = model_.bind(graph, true);
    NodeRef x = model_.embed_speech(graph, bound, features);
    Model::StackOut priv = model_.encode_private(graph, bound, x, Modality::kSpeech);
    Model::StackOut shared = model_.encode_shared(graph, bound, priv.out);
    NodeRef logits;
    if (config_.use_char_layer) {
      logits = model_.char_logits(graph, bound, shared.out);
    } else {
      logits = graph.add(graph.matmul(shared.out, bound.at("char.head.w")),
                         bound.at("char.head.b"));
    }
    NodeRef loss = ctc_loss(graph, logits, targets);
    graph.forward();
    double value = graph.value(loss).at(0);
    if (!std::isfinite(value)) {
      throw Error("finetune_step: non-finite CTC loss on '" + utt.id + "'");
    }
    graph.backward(loss);
    accumulate_param_grads(graph, model_.parameters(), grads, scale);
    loss_total += value * scale;
  }

  double lr = lr_tristage(step, config_.steps, config_.warm_frac,
                          config_.hold_frac, config_.peak_lr,
                          config_.floor_ratio);
  optimizer_.step(model_.mutable_parameters(), grads, lr);
  step_count_ = step;

  StepRecord record;
  record.step = step;
  record.task = Task::kSpeech;
  record.loss = loss_total;
  record.lr = lr;
  record.components.emplace_back("ctc", loss_total);
  history_.push_back(record);
  return record;
}

void Finetuner::run(std::ostream* log) {
  while (step_count_ < config_.steps) {
    StepRecord record = run_step();
    if (log) *log << format_step_record(record) << '\n';
  }
}

double Finetuner::greedy_wer(const Manifest& manifest) {
  double weighted = 0.0;
  std::size_t total_words = 0;
  for (const Utterance& utt : manifest.items) {
    Tensor logp = char_log_probs(load_features(manifest.resolve(utt)));
    std::string hyp = chars_.decode(greedy_decode(logp));
    std::vector<std::string> ref_words = split_words(utt.transcript);
    weighted += wer(hyp, utt.transcript) * static_cast<double>(ref_words.size());
    total_words += ref_words.size();
  }
  if (total_words == 0) throw Error("greedy_wer: empty references");
  return weighted / static_cast<double>(total_words);
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'P', 'T', 'X', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("Checkpoint: unexpected end of " + path);
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& in, const std::string& path) {
  auto len = take<std::uint32_t>(in, path);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw IoError("Checkpoint: unexpected end of " + path);
  return s;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("Checkpoint: cannot write " + path);
  out.write(kCheckpointMagic, 8);
  put<std::uint32_t>(out, 1);  // version

  auto put_size = [&](std::size_t v) { put<std::uint64_t>(out, v); };
  put_size(config.model_dim);
  put_size(config.inner_dim);
  put_size(config.heads);
  put_size(config.layers_speech);
  put_size(config.layers_text);
  put_size(config.layers_shared);
  put_size(config.layers_char);
  put_size(config.conv_pos_kernel);
  put_size(config.conv_pos_groups);
  put_size(config.rel_bias_buckets);
  put_size(config.rel_bias_max_distance);
  put_size(config.speech_feature_dim);
  put_size(config.hubert_dim);
  put_size(config.phoneme_vocab);
  put_size(config.char_vocab);
  put_size(config.codeword_count);
  put<std::uint8_t>(out, config.conv_pos_text ? 1 : 0);
  put<std::uint8_t>(out, config.use_conv_pos ? 1 : 0);
  put<std::uint8_t>(out, config.use_rel_bias ? 1 : 0);
  put<double>(out, config.hubert_temperature);

  put<std::uint64_t>(out, phonemes.size());
  for (const std::string& p : phonemes) put_string(out, p);
  put<std::uint64_t>(out, chars.size());
  for (const std::string& c : chars) put_string(out, c);

  put<std::uint64_t>(out, parameters.size());
  for (const auto& [name, tensor] : parameters) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.ndim()));
    for (std::size_t d : tensor.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  }
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("Checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IoError("Checkpoint: " + path + " is not a checkpoint file");
  }
  auto version = take<std::uint32_t>(in, path);
  if (version != 1) {
    throw IoError("Checkpoint: unsupported version in " + path);
  }

  Checkpoint ckpt;
  auto take_size = [&]() {
    return static_cast<std::size_t>(take<std::uint64_t>(in, path));
  };
  ckpt.config.model_dim = take_size();
  ckpt.config.inner_dim = take_size();
  ckpt.config.heads = take_size();
  ckpt.config.layers_speech = take_size();
  ckpt.config.layers_text = take_size();
  ckpt.config.layers_shared = take_size();
  ckpt.config.layers_char = take_size();
  ckpt.config.conv_pos_kernel = take_size();
  ckpt.config.conv_pos_groups = take_size();
  ckpt.config.rel_bias_buckets = take_size();
  ckpt.config.rel_bias_max_distance = take_size();
  ckpt.config.speech_feature_dim = take_size();
  ckpt.config.hubert_dim = take_size();
  ckpt.config.phoneme_vocab = take_size();
  ckpt.config.char_vocab = take_size();
  ckpt.config.codeword_count = take_size();
  ckpt.config.conv_pos_text = take<std::uint8_t>(in, path) != 0;
  ckpt.config.use_conv_pos = take<std::uint8_t>(in, path) != 0;
  ckpt.config.use_rel_bias = take<std::uint8_t>(in, path) != 0;
  ckpt.config.hubert_temperature = take<double>(in, path);

  auto phoneme_count = take<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < phoneme_count; ++i) {
    ckpt.phonemes.push_back(take_string(in, path));
  }
  auto char_count = take<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < char_count; ++i) {
    ckpt.chars.push_back(take_string(in, path));
  }

  auto param_count = take<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < param_count; ++i) {
    std::string name = take_string(in, path);
    auto ndim = take<std::uint32_t>(in, path);
    std::vector<std::size_t> shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(take_size());
    Tensor tensor(shape);
    in.read(reinterpret_cast<char*>(tensor.data().data()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    if (!in) throw IoError("Checkpoint: truncated parameter data in " + path);
    ckpt.parameters.emplace(std::move(name), std::move(tensor));
  }
  return ckpt;
}

Checkpoint make_checkpoint(const Model& model, const Lexicon& lexicon,
                           const CharVocab& chars) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.phonemes = lexicon.inventory();
  ckpt.chars = chars.chars();
  ckpt.parameters = model.parameters();
  return ckpt;
}

}  // namespace speechtext

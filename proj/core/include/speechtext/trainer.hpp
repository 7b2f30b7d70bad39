// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "speechtext/config.hpp"
#include "speechtext/corpus.hpp"
#include "speechtext/encoder.hpp"
#include "speechtext/losses.hpp"
#include "speechtext/masking.hpp"
#include "speechtext/paired.hpp"
#include "speechtext/textpipe.hpp"

namespace speechtext {

// --- learning rate schedules -------------------------------------------------

// 0 -> peak over `warmup` steps, then linearly back to 0 at `total`.
double lr_linear(std::size_t step, std::size_t warmup, std::size_t total,
                 double peak);

// Warm to peak over warm_frac * total, hold for hold_frac * total, then
// linear decay to floor_ratio * peak at `total`.
double lr_tristage(std::size_t step, std::size_t total, double warm_frac,
                   double hold_frac, double peak, double floor_ratio);

// --- optimizer ---------------------------------------------------------------

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.0;
  double clip_norm = 10.0;
};

class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamHyper hyper) : hyper_(hyper) {}

  // One update over every parameter that has a gradient entry. Gradients
  // are clipped jointly to the global norm first.
  void step(std::map<std::string, Tensor>& params,
            const std::map<std::string, Tensor>& grads, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  AdamHyper hyper_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

// --- task scheduling ----------------------------------------------------------

enum class Task { kSpeech, kText, kPaired };
const char* task_name(Task task);

struct BatchDescriptor {
  Task task = Task::kSpeech;
  std::vector<std::size_t> items;  // manifest indices or text line indices
};

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t warmup_steps = 50;
  double peak_lr = 2e-3;
  std::size_t batch_frames = 400;
  std::size_t ctc_start_step = 100;
  bool enable_mlm = true;
  bool enable_ctc = true;
  double paired_fraction = 1.0;  // 0 disables the paired task
  enum class AlignMode { kSwap, kCeLoss, kCrossAttention };
  AlignMode align_mode = AlignMode::kSwap;
  double swap_prob = 0.6;
  MaskSpec speech_mask{0.08, 10};
  MaskSpec text_mask{0.15, 40};
  double sil_rate = 0.25;
  OovPolicy oov_policy = OovPolicy::kSkipUtterance;
  AdamHyper adam;
  std::uint64_t seed = 1;

  void validate() const;
};

TrainConfig train_config_from(const Config& config);
ModelConfig model_config_from(const Config& config);

// Everything one pre-training run reads. The referenced objects must
// outlive the trainer.
struct PretrainData {
  const Manifest* speech = nullptr;
  const LabelMap* labels = nullptr;
  const std::vector<std::string>* text = nullptr;
  const Lexicon* lexicon = nullptr;
  const DurationModel* durations = nullptr;
  const Manifest* paired = nullptr;
  const std::map<std::string, Alignment>* alignments = nullptr;
};

// One epoch of batches: every speech batch, an equal count of sampled text
// batches, every paired batch (from the active subset), interleaved by a
// seeded shuffle. Deterministic in (config.seed, epoch).
std::vector<BatchDescriptor> schedule_tasks(
    const PretrainData& data, const TrainConfig& config,
    std::span<const std::size_t> paired_subset, std::size_t epoch);

struct StepRecord {
  std::size_t step = 0;
  Task task = Task::kSpeech;
  double loss = 0.0;
  double lr = 0.0;
  std::vector<std::pair<std::string, double>> components;
};

// Training log line: `step<TAB>task<TAB>loss<TAB>lr` plus one
// `name=value` column per loss component.
std::string format_step_record(const StepRecord& record);

// --- pre-training --------------------------------------------------------------

class Pretrainer {
 public:
  Pretrainer(Model& model, const TrainConfig& config, const PretrainData& data);

  // One optimizer update over one scheduled batch.
  StepRecord run_step();
  void run(std::ostream* log);

  LossBundle batch_losses(const BatchDescriptor& batch, Rng& rng,
                          std::map<std::string, Tensor>* grads,
                          bool ctc_active);

  // Deterministic full-corpus loss with a fixed evaluation stream; used for
  // before/after comparisons. Includes each enabled task.
  double eval_combined_loss(std::uint64_t eval_seed, bool include_ctc);

  const std::vector<StepRecord>& history() const { return history_; }
  const std::vector<std::size_t>& paired_subset() const { return paired_subset_; }
  std::size_t steps_done() const { return step_count_; }

 private:
  LossBundle speech_utterance_loss(Graph& graph, const Model::Bound& bound,
                                   std::size_t item, Rng& rng);
  LossBundle text_line_loss(Graph& graph, const Model::Bound& bound,
                            std::size_t line, Rng& rng, bool ctc_active);
  LossBundle paired_utterance_loss(Graph& graph, const Model::Bound& bound,
                                   std::size_t item, Rng& rng);
  const Tensor& features_of(const Manifest& manifest, std::size_t item);
  void refill_schedule();

  Model& model_;
  TrainConfig config_;
  PretrainData data_;
  CharVocab char_vocab_;
  AdamOptimizer optimizer_;
  Rng rng_;
  std::vector<std::size_t> paired_subset_;
  std::vector<BatchDescriptor> schedule_;
  std::size_t schedule_pos_ = 0;
  std::size_t epoch_ = 0;
  std::size_t step_count_ = 0;
  std::vector<StepRecord> history_;
  std::map<std::string, Tensor> feature_cache_;
};

// --- fine-tuning ----------------------------------------------------------------

struct FinetuneConfig {
  std::size_t steps = 600;
  double peak_lr = 3e-3;
  double warm_frac = 0.10;
  double hold_frac = 0.40;
  double decay_frac = 0.50;
  double floor_ratio = 0.05;
  bool use_char_layer = true;
  bool use_char_head = true;
  std::size_t batch_frames = 400;
  AdamHyper adam;
  std::uint64_t seed = 1;

  void validate() const;
};

FinetuneConfig finetune_config_from(const Config& config);

class Finetuner {
 public:
  // With use_char_head false the character head restarts from fresh
  // weights; missing character-layer parameters are initialized either way.
  Finetuner(Model& model, const FinetuneConfig& config,
            const Manifest& labeled, const CharVocab& chars);

  StepRecord run_step();
  void run(std::ostream* log);

  // Greedy character decoding against the manifest transcripts; corpus WER
  // (total edit distance over total reference words).
  double greedy_wer(const Manifest& manifest);
  Tensor char_log_probs(const Tensor& features);

  const std::vector<StepRecord>& history() const { return history_; }

 private:
  Model& model_;
  FinetuneConfig config_;
  const Manifest& labeled_;
  CharVocab chars_;
  AdamOptimizer optimizer_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t batch_pos_ = 0;
  std::size_t step_count_ = 0;
  std::vector<StepRecord> history_;
  std::map<std::string, Tensor> feature_cache_;
};

// --- checkpointing ----------------------------------------------------------------

// Versioned binary checkpoint: model config, vocabularies, parameters.
// save -> load -> save round-trips bit identically.
struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> phonemes;  // inventory, id order (SIL first)
  std::vector<std::string> chars;     // char vocab, index 0 = <blank>
  std::map<std::string, Tensor> parameters;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

Checkpoint make_checkpoint(const Model& model, const Lexicon& lexicon,
                           const CharVocab& chars);

// Per-frame character log probabilities of one unmasked utterance through
// the speech path; with use_char_layer false the head applies directly to
// the shared encoder output.
Tensor char_log_probs(const Model& model, const Tensor& features,
                      bool use_char_layer);

// Character vocabulary over normalized text lines plus manifest transcripts.
CharVocab build_char_vocab(const std::vector<std::string>* text,
                           const Manifest* manifest);

}  // namespace speechtext

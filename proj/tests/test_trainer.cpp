// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "speechtext/common.hpp"
#include "speechtext/labeler.hpp"
#include "speechtext/trainer.hpp"

using namespace speechtext;

TEST_CASE("linear schedule boundary values") {
  CHECK(lr_linear(0, 100, 1000, 5e-4) == 0.0);
  CHECK(lr_linear(100, 100, 1000, 5e-4) == 5e-4);
  CHECK(lr_linear(100 + 450, 100, 1000, 5e-4) == 5e-4 / 2);
  CHECK(lr_linear(1000, 100, 1000, 5e-4) == 0.0);
}

TEST_CASE("tri-stage schedule boundary values") {
  const double peak = 3e-3, floor_ratio = 0.05;
  CHECK(lr_tristage(0, 1000, 0.1, 0.4, peak, floor_ratio) == 0.0);
  CHECK(lr_tristage(100, 1000, 0.1, 0.4, peak, floor_ratio) == peak);
  CHECK(lr_tristage(500, 1000, 0.1, 0.4, peak, floor_ratio) == peak);
  CHECK(lr_tristage(1000, 1000, 0.1, 0.4, peak, floor_ratio) ==
        floor_ratio * peak);
  // Mid-decay point.
  double mid = lr_tristage(750, 1000, 0.1, 0.4, peak, floor_ratio);
  CHECK(mid < peak);
  CHECK(mid > floor_ratio * peak);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  Rng rng(1);
  std::map<std::string, Tensor> params;
  params["w"] = Tensor::randn({3, 3}, rng);
  std::map<std::string, Tensor> before;
  for (const auto& [k, v] : params) before[k] = v;

  std::map<std::string, Tensor> grads;
  grads["w"] = Tensor::zeros({3, 3});
  AdamOptimizer adam(AdamHyper{});  // weight decay 0
  adam.step(params, grads, 1e-3);
  CHECK(params["w"].data() == before["w"].data());
}

TEST_CASE("adam with zero learning rate leaves parameters unchanged") {
  Rng rng(2);
  std::map<std::string, Tensor> params;
  params["w"] = Tensor::randn({4}, rng);
  std::vector<double> before = params["w"].data();
  std::map<std::string, Tensor> grads;
  grads["w"] = Tensor::randn({4}, rng);
  AdamOptimizer adam(AdamHyper{});
  adam.step(params, grads, 0.0);
  CHECK(params["w"].data() == before);
}

TEST_CASE("adam moves parameters against the gradient") {
  std::map<std::string, Tensor> params;
  params["w"] = Tensor::vector({1.0});
  std::map<std::string, Tensor> grads;
  grads["w"] = Tensor::vector({2.0});
  AdamOptimizer adam(AdamHyper{});
  adam.step(params, grads, 0.1);
  CHECK(params["w"].at(0) < 1.0);
}

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string str() const { return path.string(); }
};

// Small corpus plus every derived artifact one pre-training run needs.
struct Fixture {
  TempDir dir;
  SyntheticCorpus corpus;
  LabelMap labels;
  DurationModel durations;
  ModelConfig model_config;

  explicit Fixture(std::uint64_t seed, std::size_t utterances = 6,
                   double noise = 0.05)
      : dir("speechtext_trainer_fixture_" + std::to_string(seed)) {
    SyntheticCorpusSpec spec;
    spec.utterance_count = utterances;
    spec.heldout_count = 2;
    spec.text_line_count = 12;
    spec.noise = noise;
    Rng rng(seed);
    corpus = make_synthetic(spec, dir.str(), rng);

    Rng km(seed + 1);
    labels = label_manifest(corpus.train, 8, 15, km);

    std::vector<std::vector<int>> frame_labels;
    for (const Utterance& utt : corpus.train.items) {
      frame_labels.push_back(frame_phonemes(corpus.alignments.at(utt.id)));
    }
    durations = DurationModel::estimate(frame_labels, 0.98);

    model_config.model_dim = 16;
    model_config.inner_dim = 32;
    model_config.heads = 2;
    model_config.layers_speech = 1;
    model_config.layers_text = 1;
    model_config.layers_shared = 1;
    model_config.layers_char = 1;
    model_config.conv_pos_kernel = 3;
    model_config.conv_pos_groups = 2;
    model_config.rel_bias_buckets = 16;
    model_config.rel_bias_max_distance = 64;
    model_config.speech_feature_dim = spec.feature_dim;
    model_config.hubert_dim = 8;
    model_config.codeword_count = 8;
    model_config.phoneme_vocab = corpus.lexicon.inventory().size();
    std::vector<std::string> sources;
    for (const auto& line : corpus.text_lines) sources.push_back(line);
    for (const auto& utt : corpus.train.items) sources.push_back(utt.transcript);
    model_config.char_vocab = CharVocab::build(sources).size();
  }

  TrainConfig train_config() const {
    TrainConfig config;
    config.steps = 12;
    config.warmup_steps = 3;
    config.peak_lr = 1e-3;
    config.batch_frames = 120;
    config.ctc_start_step = 6;
    config.text_mask = {0.06, 6};
    config.seed = 99;
    return config;
  }

  PretrainData data() const {
    PretrainData d;
    d.speech = &corpus.train;
    d.labels = &labels;
    d.text = &corpus.text_lines;
    d.lexicon = &corpus.lexicon;
    d.durations = &durations;
    d.paired = &corpus.train;
    d.alignments = &corpus.alignments;
    return d;
  }
};

}  // namespace

TEST_CASE("schedule matches text batches to speech batches and covers paired data") {
  Fixture fx(21);
  TrainConfig config = fx.train_config();
  PretrainData data = fx.data();
  std::vector<std::size_t> subset;
  for (std::size_t i = 0; i < fx.corpus.train.items.size(); ++i) {
    subset.push_back(i);
  }
  auto schedule = schedule_tasks(data, config, subset, 0);

  std::size_t speech_batches = 0, text_batches = 0;
  std::multiset<std::size_t> paired_items;
  for (const auto& batch : schedule) {
    if (batch.task == Task::kSpeech) ++speech_batches;
    if (batch.task == Task::kText) ++text_batches;
    if (batch.task == Task::kPaired) {
      for (std::size_t item : batch.items) paired_items.insert(item);
    }
  }
  CHECK(speech_batches > 0);
  CHECK(text_batches == speech_batches);
  // Every paired utterance exactly once per epoch.
  CHECK(paired_items.size() == subset.size());
  for (std::size_t item : subset) CHECK(paired_items.count(item) == 1);

  // Deterministic for one (seed, epoch); different epochs reshuffle.
  auto again = schedule_tasks(data, config, subset, 0);
  REQUIRE(again.size() == schedule.size());
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    CHECK(again[i].task == schedule[i].task);
    CHECK(again[i].items == schedule[i].items);
  }
}

TEST_CASE("paired fraction zero drops the paired task") {
  Fixture fx(22);
  TrainConfig config = fx.train_config();
  config.paired_fraction = 0.0;
  Model model(fx.model_config, *[] {
    static Rng rng(3);
    return &rng;
  }());
  PretrainData data = fx.data();
  Pretrainer trainer(model, config, data);
  CHECK(trainer.paired_subset().empty());
  auto schedule = schedule_tasks(data, config, trainer.paired_subset(), 0);
  for (const auto& batch : schedule) CHECK(batch.task != Task::kPaired);
}

TEST_CASE("pretraining runs, logs, and is seed deterministic") {
  Fixture fx(23);
  TrainConfig config = fx.train_config();
  PretrainData data = fx.data();

  auto run_once = [&]() {
    Rng rng(17);
    Model model(fx.model_config, rng);
    Pretrainer trainer(model, config, data);
    std::ostringstream log;
    trainer.run(&log);
    return std::pair(trainer.history(), log.str());
  };
  auto [history_a, log_a] = run_once();
  auto [history_b, log_b] = run_once();

  REQUIRE(history_a.size() == 12);
  CHECK(log_a == log_b);
  for (std::size_t i = 0; i < history_a.size(); ++i) {
    CHECK(history_a[i].loss == history_b[i].loss);
    CHECK(std::isfinite(history_a[i].loss));
  }

  // Log format: step<TAB>task<TAB>loss<TAB>lr then name=value columns.
  std::istringstream first_line(log_a);
  std::string line;
  std::getline(first_line, line);
  std::size_t tabs = 0;
  for (char ch : line) tabs += ch == '\t';
  CHECK(tabs >= 3);
}

TEST_CASE("ctc components appear only after the start step") {
  Fixture fx(24);
  TrainConfig config = fx.train_config();
  config.steps = 16;
  config.ctc_start_step = 9;
  Rng rng(5);
  Model model(fx.model_config, rng);
  PretrainData data = fx.data();
  Pretrainer trainer(model, config, data);
  std::ostringstream log;
  trainer.run(&log);

  bool saw_text_before = false, saw_ctc_after = false;
  for (const StepRecord& record : trainer.history()) {
    bool has_ctc = false;
    for (const auto& [name, value] : record.components) {
      if (name == "ctc") has_ctc = true;
    }
    if (record.step < 9) {
      CHECK(!has_ctc);
      if (record.task == Task::kText) saw_text_before = true;
    } else if (record.task == Task::kText) {
      CHECK(has_ctc);
      saw_ctc_after = true;
    }
  }
  CHECK(saw_text_before);
  CHECK(saw_ctc_after);
}

TEST_CASE("cross attention alignment is recognized but unsupported") {
  Fixture fx(25);
  TrainConfig config = fx.train_config();
  config.align_mode = TrainConfig::AlignMode::kCrossAttention;
  Rng rng(5);
  Model model(fx.model_config, rng);
  PretrainData data = fx.data();
  CHECK_THROWS_AS(Pretrainer(model, config, data), UnsupportedError);
}

TEST_CASE("ce alignment mode trains") {
  Fixture fx(26);
  TrainConfig config = fx.train_config();
  config.align_mode = TrainConfig::AlignMode::kCeLoss;
  config.steps = 6;
  Rng rng(5);
  Model model(fx.model_config, rng);
  PretrainData data = fx.data();
  Pretrainer trainer(model, config, data);
  trainer.run(nullptr);
  bool saw_ce = false;
  for (const StepRecord& record : trainer.history()) {
    for (const auto& [name, value] : record.components) {
      if (name == "ce") saw_ce = true;
    }
  }
  CHECK(saw_ce);
}

TEST_CASE("eval_combined_loss is deterministic and finite") {
  Fixture fx(27);
  TrainConfig config = fx.train_config();
  Rng rng(5);
  Model model(fx.model_config, rng);
  PretrainData data = fx.data();
  Pretrainer trainer(model, config, data);
  double a = trainer.eval_combined_loss(123, true);
  double b = trainer.eval_combined_loss(123, true);
  CHECK(a == b);
  CHECK(std::isfinite(a));
  CHECK(a > 0.0);
}

TEST_CASE("checkpoints round trip bit identically") {
  Fixture fx(28);
  Rng rng(5);
  Model model(fx.model_config, rng);
  std::vector<std::string> sources;
  for (const auto& line : fx.corpus.text_lines) sources.push_back(line);
  CharVocab chars = CharVocab::build(sources);
  // Rebuild the vocab the model was sized for.
  for (const auto& utt : fx.corpus.train.items) sources.push_back(utt.transcript);
  chars = CharVocab::build(sources);

  Checkpoint ckpt = make_checkpoint(model, fx.corpus.lexicon, chars);
  TempDir dir("speechtext_ckpt_test");
  std::string path_a = (dir.path / "a.ckpt").string();
  std::string path_b = (dir.path / "b.ckpt").string();
  ckpt.save(path_a);
  Checkpoint loaded = Checkpoint::load(path_a);
  loaded.save(path_b);

  std::ifstream fa(path_a, std::ios::binary), fb(path_b, std::ios::binary);
  std::string bytes_a((std::istreambuf_iterator<char>(fa)),
                      std::istreambuf_iterator<char>());
  std::string bytes_b((std::istreambuf_iterator<char>(fb)),
                      std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
  CHECK(loaded.phonemes == fx.corpus.lexicon.inventory());
  CHECK(loaded.parameters.size() == model.parameters().size());

  Model revived(loaded.config, loaded.parameters);
  CHECK(revived.parameters().at("text.embed").data() ==
        model.parameters().at("text.embed").data());
}

TEST_CASE("finetuning runs and char head choice changes the start point") {
  Fixture fx(29, 6, 0.02);
  Rng rng(5);
  Model pretrained(fx.model_config, rng);

  std::vector<std::string> sources;
  for (const auto& utt : fx.corpus.train.items) sources.push_back(utt.transcript);
  for (const auto& line : fx.corpus.text_lines) sources.push_back(line);
  CharVocab chars = CharVocab::build(sources);

  FinetuneConfig config;
  config.steps = 4;
  config.peak_lr = 1e-3;
  config.batch_frames = 120;
  config.seed = 7;

  Model with_head = pretrained;
  Finetuner ft_a(with_head, config, fx.corpus.train, chars);
  StepRecord first_a = ft_a.run_step();

  FinetuneConfig fresh = config;
  fresh.use_char_head = false;
  Model without_head = pretrained;
  Finetuner ft_b(without_head, fresh, fx.corpus.train, chars);
  StepRecord first_b = ft_b.run_step();

  CHECK(first_a.loss != first_b.loss);
  CHECK(std::isfinite(first_a.loss));
  CHECK(std::isfinite(first_b.loss));

  double wer_now = ft_a.greedy_wer(fx.corpus.train);
  CHECK(wer_now >= 0.0);
}

TEST_CASE("relabeling from hidden states is deterministic") {
  Fixture fx(30);
  Rng rng(5);
  Model model(fx.model_config, rng);
  Rng km_a(9), km_b(9);
  LabelMap a = relabel_from_hidden(model, fx.corpus.train, -1, 4, 10, km_a);
  LabelMap b = relabel_from_hidden(model, fx.corpus.train, -1, 4, 10, km_b);
  CHECK(a == b);
  for (const auto& [id, labels] : a) {
    CHECK(labels.size() == fx.corpus.train.by_id(id).frames);
  }

  LabelMap ones = relabel_from_hidden(model, fx.corpus.train, -1, 1, 5, km_a);
  for (const auto& [id, labels] : ones) {
    for (int z : labels) CHECK(z == 0);
  }

  CHECK_THROWS_AS(relabel_from_hidden(model, fx.corpus.train, 99, 4, 5, km_a),
                  Error);
}

TEST_CASE("format_step_record uses tab separated columns") {
  StepRecord record;
  record.step = 7;
  record.task = Task::kText;
  record.loss = 1.5;
  record.lr = 0.25;
  record.components = {{"mlm", 1.0}, {"ctc", 0.5}};
  CHECK(format_step_record(record) == "7\ttext\t1.5\t0.25\tmlm=1\tctc=0.5");
}

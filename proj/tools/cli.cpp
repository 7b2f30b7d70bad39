// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "speechtext/common.hpp"
#include "speechtext/config.hpp"
#include "speechtext/corpus.hpp"
#include "speechtext/decode.hpp"
#include "speechtext/diagnostics.hpp"
#include "speechtext/graph.hpp"
#include "speechtext/labeler.hpp"
#include "speechtext/losses.hpp"
#include "speechtext/trainer.hpp"

namespace speechtext::cli {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string out_dir = ".";
};

void attach_common(CLI::App* app, CommonArgs& args) {
  app->add_option("--config", args.config_path, "configuration file");
  app->add_option("--set", args.overrides,
                  "override a config key (key=value, repeatable)");
  app->add_option("--seed", args.seed, "random seed")
      ->each([&](const std::string&) { args.seed_given = true; });
  app->add_option("--out-dir", args.out_dir, "output directory");
}

Config make_config(const CommonArgs& args) {
  Config config;
  if (!args.config_path.empty()) config.load_overlay(args.config_path);
  for (const std::string& assignment : args.overrides) {
    config.apply_override(assignment);
  }
  if (args.seed_given) {
    config.set("train.seed", std::to_string(args.seed));
    config.set("finetune.seed", std::to_string(args.seed));
  }
  return config;
}

std::uint64_t effective_seed(const CommonArgs& args, const Config& config) {
  if (args.seed_given) return args.seed;
  return static_cast<std::uint64_t>(config.get_int("train.seed"));
}

DecodeConfig decode_config_from(const Config& config) {
  DecodeConfig out;
  out.beam = config.get_size("decode.beam");
  out.lm_weight = config.get_double("decode.w1");
  out.length_bonus = config.get_double("decode.w2");
  out.lm_order = config.get_size("decode.lm_order");
  out.validate();
  return out;
}

std::string normalized_line(const std::string& line) {
  std::vector<std::string> words = normalize_words(line);
  std::string joined;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) joined += ' ';
    joined += words[i];
  }
  return joined;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  return Model(ckpt.config, ckpt.parameters);
}

// Paired view of a manifest: the utterances that have alignments.
Manifest paired_subset_of(const Manifest& manifest,
                          const std::map<std::string, Alignment>& alignments) {
  Manifest paired;
  paired.base_dir = manifest.base_dir;
  for (const Utterance& utt : manifest.items) {
    if (alignments.count(utt.id)) paired.items.push_back(utt);
  }
  return paired;
}

// --- subcommand bodies -------------------------------------------------------

int cmd_synth(const CommonArgs& common) {
  Config config = make_config(common);
  SyntheticCorpusSpec spec = synth_spec_from(config);
  Rng rng(effective_seed(common, config));
  SyntheticCorpus corpus = make_synthetic(spec, common.out_dir, rng);
  save_synthetic(corpus, common.out_dir);
  std::cout << "synth: " << corpus.train.items.size() << " train + "
            << corpus.heldout.items.size() << " held-out utterances, "
            << corpus.text_lines.size() << " text lines, inventory "
            << corpus.lexicon.inventory().size() << " -> " << common.out_dir
            << "\n";
  return 0;
}

int cmd_features(const CommonArgs& common, const std::string& audio_manifest) {
  Config config = make_config(common);
  MfccConfig mfcc;
  mfcc.frame_ms = config.get_double("labeler.frame_ms");
  mfcc.hop_ms = config.get_double("labeler.hop_ms");
  mfcc.mel_filters = config.get_size("labeler.mel_filters");

  std::ifstream in(audio_manifest);
  if (!in) throw IoError("features: cannot open " + audio_manifest);
  fs::create_directories(fs::path(common.out_dir) / "features");
  Manifest manifest;
  manifest.base_dir = common.out_dir;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> parts;
    std::istringstream row(line);
    std::string item;
    while (std::getline(row, item, '\t')) parts.push_back(item);
    if (parts.size() < 2) {
      throw IoError("features: expected utt_id<TAB>wav_path[<TAB>transcript]");
    }
    WavData wav = load_wav(parts[1]);
    Tensor features = compute_mfcc(wav.samples, wav.sample_rate, mfcc);
    std::string rel = "features/" + parts[0] + ".bin";
    save_features((fs::path(common.out_dir) / rel).string(), features);
    manifest.items.push_back({parts[0], rel, features.rows(),
                              parts.size() > 2 ? parts[2] : ""});
  }
  manifest.save((fs::path(common.out_dir) / "manifest.tsv").string());
  std::cout << "features: " << manifest.items.size() << " utterances -> "
            << common.out_dir << "\n";
  return 0;
}

int cmd_labels(const CommonArgs& common, const std::string& manifest_path,
               const std::string& out_path) {
  Config config = make_config(common);
  Manifest manifest = Manifest::load(manifest_path);
  Rng rng(effective_seed(common, config));
  LabelMap labels = label_manifest(manifest, config.get_size("labeler.classes"),
                                   config.get_size("labeler.iterations"), rng);
  save_labels(out_path, labels);
  std::cout << "labels: " << labels.size() << " utterances -> " << out_path
            << "\n";
  return 0;
}

int cmd_duration_model(const CommonArgs& common, const std::string& align_path,
                       const std::string& lexicon_path,
                       const std::string& out_path) {
  Config config = make_config(common);
  Lexicon lexicon = Lexicon::load(lexicon_path);
  auto alignments = load_alignments(align_path, lexicon);
  std::vector<std::vector<int>> frame_labels;
  for (const auto& [id, alignment] : alignments) {
    frame_labels.push_back(frame_phonemes(alignment));
  }
  DurationModel model = DurationModel::estimate(
      frame_labels, config.get_double("text.duration_cutoff"));
  model.save(out_path, lexicon.inventory());
  std::size_t longest = model.max_retained_length();
  std::cout << "duration-model: " << model.entries().size()
            << " phonemes, longest retained repetition " << longest << " -> "
            << out_path << "\n";
  if (longest > config.get_size("mask.text_span")) {
    std::cout << "note: mask.text_span " << config.get_size("mask.text_span")
              << " is shorter than the longest retained duration " << longest
              << "; masked spans may leak phoneme identity\n";
  }
  return 0;
}

int cmd_upsample(const CommonArgs& common, const std::string& text_path,
                 const std::string& lexicon_path,
                 const std::string& durations_path,
                 const std::string& out_path) {
  Config config = make_config(common);
  Lexicon lexicon = Lexicon::load(lexicon_path);
  DurationModel durations = DurationModel::load(durations_path, lexicon);
  std::vector<std::string> lines = load_text_lines(text_path);
  OovPolicy policy = config.get_string("text.oov_policy") == "spell"
                         ? OovPolicy::kSpellOut
                         : OovPolicy::kSkipUtterance;
  Rng rng(effective_seed(common, config));
  std::ofstream out(out_path);
  if (!out) throw IoError("upsample: cannot write " + out_path);
  std::size_t written = 0, skipped = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      PhonemizedText phonemized = phonemize(lines[i], lexicon, policy);
      SilInsertedText with_sil =
          insert_sil(phonemized, config.get_double("text.sil_rate"), rng);
      UpsampledText upsampled = upsample(with_sil, durations, rng);
      out << i << '\t';
      for (std::size_t f = 0; f < upsampled.frames.size(); ++f) {
        if (f) out << ' ';
        out << lexicon.token(upsampled.frames[f]);
      }
      out << '\n';
      ++written;
    } catch (const OovError& err) {
      std::cerr << "upsample: skipping line " << i << ": " << err.what() << "\n";
      ++skipped;
    }
  }
  std::cout << "upsample: " << written << " lines written, " << skipped
            << " skipped -> " << out_path << "\n";
  return 0;
}

int cmd_pretrain(const CommonArgs& common, const std::string& manifest_path,
                 const std::string& labels_path, const std::string& text_path,
                 const std::string& lexicon_path,
                 const std::string& durations_path,
                 const std::string& align_path) {
  Config config = make_config(common);
  Manifest manifest = Manifest::load(manifest_path);
  LabelMap labels = load_labels(labels_path);
  std::vector<std::string> text = load_text_lines(text_path);
  Lexicon lexicon = Lexicon::load(lexicon_path);
  DurationModel durations = DurationModel::load(durations_path, lexicon);

  std::map<std::string, Alignment> alignments;
  Manifest paired;
  paired.base_dir = manifest.base_dir;
  if (!align_path.empty()) {
    alignments = load_alignments(align_path, lexicon);
    paired = paired_subset_of(manifest, alignments);
  }

  TrainConfig train_config = train_config_from(config);
  ModelConfig model_config = model_config_from(config);
  model_config.phoneme_vocab = lexicon.inventory().size();
  CharVocab chars = build_char_vocab(&text, &manifest);
  model_config.char_vocab = chars.size();
  model_config.validate();

  Rng rng(effective_seed(common, config));
  Model model(model_config, rng);

  PretrainData data;
  data.speech = &manifest;
  data.labels = &labels;
  data.text = &text;
  data.lexicon = &lexicon;
  data.durations = &durations;
  data.paired = &paired;
  data.alignments = &alignments;

  fs::create_directories(common.out_dir);
  std::ofstream log((fs::path(common.out_dir) / "train.log").string());
  Pretrainer trainer(model, train_config, data);
  trainer.run(&log);

  std::string ckpt_path = (fs::path(common.out_dir) / "checkpoint.ckpt").string();
  make_checkpoint(model, lexicon, chars).save(ckpt_path);
  std::cout << "pretrain: " << trainer.steps_done() << " steps, checkpoint -> "
            << ckpt_path << "\n";
  return 0;
}

int cmd_relabel(const CommonArgs& common, const std::string& ckpt_path,
                const std::string& manifest_path, const std::string& out_path) {
  Config config = make_config(common);
  Checkpoint ckpt = Checkpoint::load(ckpt_path);
  Model model = model_from_checkpoint(ckpt);
  Manifest manifest = Manifest::load(manifest_path);
  Rng rng(effective_seed(common, config));
  LabelMap labels = relabel_from_hidden(
      model, manifest, config.get_int("labeler.relabel_layer"),
      config.get_size("labeler.relabel_classes"),
      config.get_size("labeler.iterations"), rng);
  save_labels(out_path, labels);
  std::cout << "relabel: " << labels.size() << " utterances -> " << out_path
            << "\n";
  return 0;
}

int cmd_finetune(const CommonArgs& common, const std::string& ckpt_path,
                 const std::string& manifest_path) {
  Config config = make_config(common);
  Checkpoint ckpt = Checkpoint::load(ckpt_path);
  Model model = model_from_checkpoint(ckpt);
  Manifest manifest = Manifest::load(manifest_path);
  CharVocab chars = CharVocab::from_chars(ckpt.chars);
  FinetuneConfig ft_config = finetune_config_from(config);

  fs::create_directories(common.out_dir);
  std::ofstream log((fs::path(common.out_dir) / "finetune.log").string());
  Finetuner finetuner(model, ft_config, manifest, chars);
  finetuner.run(&log);

  Checkpoint out = ckpt;
  out.parameters = model.parameters();
  std::string out_path = (fs::path(common.out_dir) / "finetuned.ckpt").string();
  out.save(out_path);
  double train_wer = finetuner.greedy_wer(manifest);
  std::cout << "finetune: greedy WER on the training manifest "
            << train_wer << ", checkpoint -> " << out_path << "\n";
  return 0;
}

int cmd_decode(const CommonArgs& common, const std::string& ckpt_path,
               const std::string& manifest_path, const std::string& out_path,
               const std::string& lm_path, const std::string& lm_corpus,
               const std::string& lm_out) {
  Config config = make_config(common);
  Checkpoint ckpt = Checkpoint::load(ckpt_path);
  Model model = model_from_checkpoint(ckpt);
  Manifest manifest = Manifest::load(manifest_path);
  CharVocab chars = CharVocab::from_chars(ckpt.chars);
  DecodeConfig decode_config = decode_config_from(config);
  bool use_char_layer = config.get_bool("finetune.use_char_layer");

  std::optional<NGramLM> lm;
  if (!lm_path.empty() && !lm_corpus.empty()) {
    throw ConfigError("decode: give either --lm or --lm-corpus, not both");
  }
  if (!lm_path.empty()) {
    lm = NGramLM::load(lm_path);
  } else if (!lm_corpus.empty()) {
    std::vector<std::vector<int>> encoded;
    for (const std::string& line : load_text_lines(lm_corpus)) {
      try {
        encoded.push_back(chars.encode(normalized_line(line)));
      } catch (const Error&) {
        // Characters outside the checkpoint vocabulary never reach decoding.
      }
    }
    if (encoded.empty()) {
      throw Error("decode: no usable language model lines in " + lm_corpus);
    }
    lm = NGramLM::train(encoded, decode_config.lm_order, chars.size(),
                        config.get_double("decode.lm_add_k"),
                        config.get_double("decode.lm_backoff"));
    if (!lm_out.empty()) lm->save(lm_out);
  }

  std::ofstream out(out_path);
  if (!out) throw IoError("decode: cannot write " + out_path);
  for (const Utterance& utt : manifest.items) {
    Tensor logp = char_log_probs(model, load_features(manifest.resolve(utt)),
                                 use_char_layer);
    Hypothesis hyp = beam_decode(logp, lm ? &*lm : nullptr, decode_config);
    out << utt.id << '\t' << chars.decode(hyp.symbols) << '\n';
  }
  std::cout << "decode: " << manifest.items.size() << " utterances -> "
            << out_path << "\n";
  return 0;
}

int cmd_score(const std::string& hyp_path, const std::string& manifest_path) {
  Manifest manifest = Manifest::load(manifest_path);
  std::ifstream in(hyp_path);
  if (!in) throw IoError("score: cannot open " + hyp_path);
  std::map<std::string, std::string> hyps;
  std::string line;
  while (std::getline(in, line)) {
    auto tab = line.find('\t');
    hyps[line.substr(0, tab)] =
        tab == std::string::npos ? "" : line.substr(tab + 1);
  }
  double weighted = 0.0;
  std::size_t total_words = 0;
  for (const Utterance& utt : manifest.items) {
    if (utt.transcript.empty()) continue;
    auto it = hyps.find(utt.id);
    std::string hyp = it == hyps.end() ? "" : it->second;
    std::vector<std::string> ref_words = split_words(utt.transcript);
    double utt_wer = wer(hyp, utt.transcript);
    std::cout << utt.id << '\t' << utt_wer << '\n';
    weighted += utt_wer * static_cast<double>(ref_words.size());
    total_words += ref_words.size();
  }
  if (total_words == 0) throw Error("score: no scored references");
  std::cout << "WER\t" << weighted / static_cast<double>(total_words) << '\n';
  return 0;
}

int cmd_diagnose(const CommonArgs& common, const std::string& ckpt_path,
                 const std::string& manifest_path, const std::string& align_path,
                 bool untrained) {
  Config config = make_config(common);
  Checkpoint ckpt = Checkpoint::load(ckpt_path);
  Model model = model_from_checkpoint(ckpt);
  if (untrained) {
    Rng rng(effective_seed(common, config));
    model = Model(ckpt.config, rng);
  }
  Manifest manifest = Manifest::load(manifest_path);
  Lexicon lexicon;
  {
    // Rebuild a lookup lexicon from the checkpoint inventory for alignment
    // parsing: any entry works since only token ids are needed.
    std::map<std::string, std::vector<std::string>> entries;
    for (std::size_t i = 1; i < ckpt.phonemes.size(); ++i) {
      entries["W" + std::to_string(i)] = {ckpt.phonemes[i]};
    }
    lexicon = Lexicon::from_entries(entries);
  }
  auto alignments = load_alignments(align_path, lexicon);
  Manifest paired = paired_subset_of(manifest, alignments);
  if (paired.items.empty()) {
    throw Error("diagnose: no aligned utterances in the manifest");
  }

  struct Selector {
    std::size_t speech;
    std::size_t text;
    std::string name;
  };
  std::vector<Selector> selectors = {
      {model.private_out_index(Modality::kSpeech),
       model.private_out_index(Modality::kText), "private_out"},
      {model.shared_mid_index(Modality::kSpeech),
       model.shared_mid_index(Modality::kText), "shared_mid"},
      {model.shared_out_index(Modality::kSpeech),
       model.shared_out_index(Modality::kText), "shared_out"},
  };

  fs::create_directories(common.out_dir);
  double band = 0.15;
  for (const Selector& sel : selectors) {
    std::vector<HeatMap> maps;
    std::vector<std::vector<double>> rows_speech, rows_text;
    for (const Utterance& utt : paired.items) {
      Tensor features = load_features(paired.resolve(utt));
      HiddenStates speech = model.encode(model.embed_speech_values(features),
                                         Modality::kSpeech);
      std::vector<int> phonemes = frame_phonemes(alignments.at(utt.id));
      HiddenStates text = model.encode(model.embed_text_values(phonemes),
                                       Modality::kText);
      maps.push_back(similarity_heatmap(speech.per_layer[sel.speech],
                                        text.per_layer[sel.text], sel.speech,
                                        utt.id));
      const Tensor& hs = speech.per_layer[sel.speech];
      const Tensor& ht = text.per_layer[sel.text];
      for (std::size_t t = 0; t < hs.rows(); ++t) {
        rows_speech.emplace_back(hs.data().begin() + t * hs.cols(),
                                 hs.data().begin() + (t + 1) * hs.cols());
      }
      for (std::size_t t = 0; t < ht.rows(); ++t) {
        rows_text.emplace_back(ht.data().begin() + t * ht.cols(),
                               ht.data().begin() + (t + 1) * ht.cols());
      }
    }
    Tensor aggregated = aggregate_heatmaps(maps, 32, 32);
    std::string stem = "heatmap_layer" + std::to_string(sel.speech);
    write_csv((fs::path(common.out_dir) / (stem + ".csv")).string(), aggregated);
    write_pgm((fs::path(common.out_dir) / (stem + ".pgm")).string(), aggregated);
    double dominance = diagonal_dominance(aggregated, band);
    std::cout << "diagnose: layer " << sel.name << " (" << sel.speech
              << ") diagonal dominance " << dominance << "\n";

    // Joint 2-D projection with modality tags.
    std::size_t dim = model.config().model_dim;
    Tensor stacked({rows_speech.size() + rows_text.size(), dim});
    std::size_t r = 0;
    for (const auto& row : rows_speech) {
      for (std::size_t c = 0; c < dim; ++c) stacked.at(r, c) = row[c];
      ++r;
    }
    for (const auto& row : rows_text) {
      for (std::size_t c = 0; c < dim; ++c) stacked.at(r, c) = row[c];
      ++r;
    }
    auto coords = project_2d(stacked);
    std::ofstream proj((fs::path(common.out_dir) /
                        ("projection_layer" + std::to_string(sel.speech) + ".csv"))
                           .string());
    proj << "x,y,modality\n";
    for (std::size_t i = 0; i < coords.size(); ++i) {
      proj << coords[i][0] << ',' << coords[i][1] << ','
           << (i < rows_speech.size() ? "speech" : "text") << '\n';
    }
  }
  return 0;
}

int cmd_gradcheck() {
  // Finite-difference suites over every loss and a small encoder stack.
  bool all_passed = true;
  auto report_line = [&](const std::string& name, const FiniteDiffReport& report) {
    bool ok = report.passed();
    all_passed = all_passed && ok;
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << " max rel error "
              << report.max_rel_error() << "\n";
  };

  Rng rng(2026);
  {
    Graph graph;
    Tensor h = Tensor::randn({4, 5}, rng);
    h.requires_grad = true;
    Tensor proj = Tensor::randn({5, 3}, rng);
    proj.requires_grad = true;
    Tensor codes = Tensor::randn({4, 3}, rng);
    codes.requires_grad = true;
    NodeRef hs = graph.input("h", h);
    HubertHeadRefs head{graph.input("proj", proj), graph.input("codes", codes),
                        0.1};
    std::vector<int> labels = {1, 0, 3, 2};
    std::vector<std::size_t> mask = {0, 2, 3};
    auto result = hubert_loss(graph, hs, labels, mask, head, 4);
    report_line("hubert_loss", finite_diff_check(graph, result.loss));
  }
  {
    Graph graph;
    Tensor h = Tensor::randn({4, 3}, rng);
    h.requires_grad = true;
    Tensor w = Tensor::randn({3, 5}, rng);
    w.requires_grad = true;
    Tensor b = Tensor::randn({5}, rng);
    b.requires_grad = true;
    std::vector<int> targets = {0, 4, 2, 1};
    std::vector<std::size_t> mask = {0, 2, 3};
    NodeRef loss = mlm_loss(graph, graph.input("h", h), targets, mask,
                            graph.input("w", w), graph.input("b", b), 5);
    report_line("mlm_loss", finite_diff_check(graph, loss));
  }
  {
    Graph graph;
    Tensor logits = Tensor::randn({6, 4}, rng);
    logits.requires_grad = true;
    std::vector<int> target = {2, 1, 3};
    NodeRef loss = ctc_loss(graph, graph.input("logits", logits), target);
    report_line("ctc_loss", finite_diff_check(graph, loss));
  }
  {
    Graph graph;
    Tensor a = Tensor::randn({4, 3}, rng);
    a.requires_grad = true;
    Tensor b = Tensor::randn({4, 3}, rng);
    b.requires_grad = true;
    std::vector<std::size_t> unmasked = {0, 2};
    NodeRef loss = ce_alignment_loss(graph, graph.input("a", a),
                                     graph.input("b", b), unmasked);
    report_line("ce_alignment_loss", finite_diff_check(graph, loss));
  }
  {
    ModelConfig cfg;
    cfg.model_dim = 8;
    cfg.inner_dim = 16;
    cfg.heads = 2;
    cfg.layers_speech = 1;
    cfg.layers_text = 1;
    cfg.layers_shared = 1;
    cfg.layers_char = 0;
    cfg.conv_pos_kernel = 3;
    cfg.conv_pos_groups = 2;
    cfg.rel_bias_buckets = 8;
    cfg.rel_bias_max_distance = 32;
    cfg.speech_feature_dim = 5;
    cfg.hubert_dim = 4;
    cfg.phoneme_vocab = 6;
    cfg.char_vocab = 5;
    cfg.codeword_count = 4;
    Model model(cfg, rng);
    Tensor features = Tensor::randn({3, 5}, rng);
    features.requires_grad = true;
    Graph graph;
    Model::Bound bound = model.bind(graph, true);
    NodeRef x = model.embed_speech(graph, bound, features);
    auto priv = model.encode_private(graph, bound, x, Modality::kSpeech);
    auto shared = model.encode_shared(graph, bound, priv.out);
    NodeRef probe = graph.constant(Tensor::randn({3, 8}, rng));
    NodeRef loss = graph.scale(graph.sum_all(graph.mul(shared.out, probe)), 0.05);
    report_line("encoder_stack", finite_diff_check(graph, loss));
  }
  return all_passed ? 0 : 1;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"joint speech-text pre-training pipeline"};
  app.require_subcommand(1);

  CommonArgs common;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  attach_common(synth, common);

  // features
  std::string audio_manifest;
  auto* features = app.add_subcommand("features", "MFCC features from audio");
  attach_common(features, common);
  features->add_option("--audio-manifest", audio_manifest,
                       "utt_id<TAB>wav_path[<TAB>transcript] lines")
      ->required();

  // labels
  std::string manifest_path, out_path;
  auto* labels = app.add_subcommand("labels", "k-means pseudo labels");
  attach_common(labels, common);
  labels->add_option("--manifest", manifest_path)->required();
  labels->add_option("--out", out_path)->required();

  // duration-model
  std::string align_path, lexicon_path;
  auto* durations = app.add_subcommand("duration-model",
                                       "phoneme duration distributions");
  attach_common(durations, common);
  durations->add_option("--alignments", align_path)->required();
  durations->add_option("--lexicon", lexicon_path)->required();
  durations->add_option("--out", out_path)->required();

  // upsample
  std::string text_path, durations_path;
  auto* upsample_cmd = app.add_subcommand("upsample", "up-sample a text corpus");
  attach_common(upsample_cmd, common);
  upsample_cmd->add_option("--text", text_path)->required();
  upsample_cmd->add_option("--lexicon", lexicon_path)->required();
  upsample_cmd->add_option("--durations", durations_path)->required();
  upsample_cmd->add_option("--out", out_path)->required();

  // pretrain
  std::string labels_path;
  auto* pretrain = app.add_subcommand("pretrain", "joint pre-training");
  attach_common(pretrain, common);
  pretrain->add_option("--manifest", manifest_path)->required();
  pretrain->add_option("--labels", labels_path)->required();
  pretrain->add_option("--text", text_path)->required();
  pretrain->add_option("--lexicon", lexicon_path)->required();
  pretrain->add_option("--durations", durations_path)->required();
  pretrain->add_option("--alignments", align_path,
                       "paired-task forced alignments (optional)");

  // relabel
  std::string ckpt_path;
  auto* relabel = app.add_subcommand("relabel",
                                     "second-iteration labels from hidden states");
  attach_common(relabel, common);
  relabel->add_option("--checkpoint", ckpt_path)->required();
  relabel->add_option("--manifest", manifest_path)->required();
  relabel->add_option("--out", out_path)->required();

  // finetune
  auto* finetune = app.add_subcommand("finetune", "CTC fine-tuning");
  attach_common(finetune, common);
  finetune->add_option("--checkpoint", ckpt_path)->required();
  finetune->add_option("--manifest", manifest_path)->required();

  // decode
  std::string lm_path, lm_corpus, lm_out;
  auto* decode = app.add_subcommand("decode", "beam decoding");
  attach_common(decode, common);
  decode->add_option("--checkpoint", ckpt_path)->required();
  decode->add_option("--manifest", manifest_path)->required();
  decode->add_option("--out", out_path)->required();
  decode->add_option("--lm", lm_path, "language model file");
  decode->add_option("--lm-corpus", lm_corpus, "train a language model from text");
  decode->add_option("--lm-out", lm_out, "save the trained language model");

  // score
  std::string hyp_path;
  auto* score = app.add_subcommand("score", "WER against manifest transcripts");
  attach_common(score, common);
  score->add_option("--hyp", hyp_path)->required();
  score->add_option("--manifest", manifest_path)->required();

  // diagnose
  bool untrained = false;
  auto* diagnose = app.add_subcommand("diagnose",
                                      "similarity heat maps and projections");
  attach_common(diagnose, common);
  diagnose->add_option("--checkpoint", ckpt_path)->required();
  diagnose->add_option("--manifest", manifest_path)->required();
  diagnose->add_option("--alignments", align_path)->required();
  diagnose->add_flag("--untrained", untrained,
                     "re-initialize parameters from the seed before analysis");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck",
                                       "finite difference gradient suites");
  attach_common(gradcheck, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) return cmd_synth(common);
    if (features->parsed()) return cmd_features(common, audio_manifest);
    if (labels->parsed()) return cmd_labels(common, manifest_path, out_path);
    if (durations->parsed()) {
      return cmd_duration_model(common, align_path, lexicon_path, out_path);
    }
    if (upsample_cmd->parsed()) {
      return cmd_upsample(common, text_path, lexicon_path, durations_path,
                          out_path);
    }
    if (pretrain->parsed()) {
      return cmd_pretrain(common, manifest_path, labels_path, text_path,
                          lexicon_path, durations_path, align_path);
    }
    if (relabel->parsed()) {
      return cmd_relabel(common, ckpt_path, manifest_path, out_path);
    }
    if (finetune->parsed()) return cmd_finetune(common, ckpt_path, manifest_path);
    if (decode->parsed()) {
      return cmd_decode(common, ckpt_path, manifest_path, out_path, lm_path,
                        lm_corpus, lm_out);
    }
    if (score->parsed()) return cmd_score(hyp_path, manifest_path);
    if (diagnose->parsed()) {
      return cmd_diagnose(common, ckpt_path, manifest_path, align_path,
                          untrained);
    }
    if (gradcheck->parsed()) return cmd_gradcheck();
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const std::string& arg : args) argv.push_back(arg.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace speechtext::cli

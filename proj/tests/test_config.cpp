// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "speechtext/common.hpp"
#include "speechtext/config.hpp"
#include "speechtext/trainer.hpp"

using namespace speechtext;

TEST_CASE("defaults are loaded for every registered key") {
  Config config;
  for (const ConfigKey& key : Config::registry()) {
    CHECK(config.get_string(key.key) == key.default_value);
  }
}

TEST_CASE("unknown keys are hard errors") {
  Config config;
  CHECK_THROWS_AS(config.set("model.dmi", "32"), ConfigError);  // typo
  CHECK_THROWS_AS(config.apply_override("train.stepz=10"), ConfigError);
  CHECK_THROWS_AS(config.get_string("no.such.key"), ConfigError);
}

TEST_CASE("file loading rejects unknown keys and malformed lines") {
  std::string path = "test_config.tmp";
  {
    std::ofstream out(path);
    out << "# comment\n";
    out << "model.dim = 16\n";
    out << "bogus.key = 3\n";
  }
  CHECK_THROWS_AS(Config::load(path), ConfigError);
  {
    std::ofstream out(path);
    out << "model.dim = 16\n";
    out << "train.steps = 42\n";
  }
  Config config = Config::load(path);
  CHECK(config.get_size("model.dim") == 16);
  CHECK(config.get_size("train.steps") == 42);
  std::remove(path.c_str());
}

TEST_CASE("overrides win over file values") {
  Config config;
  config.apply_override("train.peak_lr=0.5");
  CHECK(config.get_double("train.peak_lr") == 0.5);
  config.apply_override("train.peak_lr = 0.25");
  CHECK(config.get_double("train.peak_lr") == 0.25);
}

TEST_CASE("typed getters validate their values") {
  Config config;
  config.set("train.steps", "abc");
  CHECK_THROWS_AS(config.get_int("train.steps"), ConfigError);
  config.set("train.enable_mlm", "maybe");
  CHECK_THROWS_AS(config.get_bool("train.enable_mlm"), ConfigError);
  config.set("train.steps", "-3");
  CHECK_THROWS_AS(config.get_size("train.steps"), ConfigError);
}

TEST_CASE("typed config factories read the registry keys") {
  Config config;
  config.apply_override("model.dim=16");
  config.apply_override("model.heads=2");
  config.apply_override("mask.speech_prob=0.2");
  config.apply_override("paired.align=ce_loss");
  ModelConfig model = model_config_from(config);
  CHECK(model.model_dim == 16);
  CHECK(model.heads == 2);
  TrainConfig train = train_config_from(config);
  CHECK(train.speech_mask.start_probability == 0.2);
  CHECK(train.align_mode == TrainConfig::AlignMode::kCeLoss);

  config.apply_override("paired.align=bogus");
  CHECK_THROWS_AS(train_config_from(config), ConfigError);
}

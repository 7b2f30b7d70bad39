// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace speechtext {

struct ConfigKey {
  const char* key;
  const char* default_value;
  const char* description;
};

// Flat key-value configuration with namespaced keys. Every key must appear
// in the registry; an unknown key in a file or override is a hard error, so
// typos never fall back to silent defaults.
//
// File format: `key = value` lines, `#` comments, blank lines ignored.
class Config {
 public:
  Config();  // all defaults

  static Config load(const std::string& path);
  void load_overlay(const std::string& path);

  // `key=value`, last writer wins.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  static bool is_known(const std::string& key);
  static const std::vector<ConfigKey>& registry();

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace speechtext

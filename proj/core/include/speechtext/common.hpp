// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace speechtext {

// Base type for every structured error thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor / graph shape violations. The message names the offending node.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad or unknown configuration keys and values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File format and filesystem problems.
class IoError : public Error {
 public:
  using Error::Error;
};

// Features that are configuration-recognized but intentionally not built.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

std::uint64_t splitmix64(std::uint64_t x);

// Deterministic random source. Every random decision in the library flows
// through an explicitly passed Rng; there is no global generator. The
// distribution math is hand rolled so that streams do not depend on the
// standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; pairs are cached.
  double normal();
  double normal(double mean, double stddev);

  // Uniform over [0, n); n must be positive. Rejection sampled, no bias.
  std::size_t uniform_index(std::size_t n);

  bool bernoulli(double p);

  // Independent child stream derived from this generator's seed and a salt.
  // Forking does not consume state from the parent.
  Rng fork(std::uint64_t salt) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace speechtext

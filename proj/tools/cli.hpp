// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <vector>

namespace speechtext::cli {

// Runs one subcommand; returns the process exit code. Errors print a
// structured diagnostic to stderr and return nonzero.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace speechtext::cli

// Copyright 2026 The speechtext Authors
//
// Licensed under the Apache License, Version 2.0

#include "cli.hpp"

int main(int argc, char** argv) { return speechtext::cli::run(argc, argv); }

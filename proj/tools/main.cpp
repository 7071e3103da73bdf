// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#include "cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dprompt::cli::run(std::move(args));
}

// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "ssgd/harness/commands.hpp"

int main(int argc, char** argv) { return ssgd::harness::run_cli(argc, argv, std::cout, std::cerr); }

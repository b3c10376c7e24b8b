// SPDX-License-Identifier: Apache-2.0

#include "elasreg_cli/commands.hpp"

#include <iostream>

int main(int argc, char** argv) { return elasreg::cli::main_entry(argc, argv, std::cout, std::cerr); }

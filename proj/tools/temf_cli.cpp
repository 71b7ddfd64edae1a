// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "temf/cli.hpp"

int main(int argc, char** argv) { return temf::run_cli(argc, argv, std::cout, std::cerr); }

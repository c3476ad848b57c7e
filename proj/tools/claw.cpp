#include <iostream>

#include "claw/cli.hpp"

int main(int argc, char** argv) { return claw::cli::run_cli(argc, argv, std::cout, std::cerr); }

#include <iostream>

#include "semloop/cli.hpp"

int main(int argc, char** argv) { return semloop::run_cli(argc, argv, std::cout, std::cerr); }

#include <iostream>

#include "dopf/cli.hpp"

int main(int argc, char** argv) { return dopf::run_cli(argc, argv, std::cout, std::cerr); }

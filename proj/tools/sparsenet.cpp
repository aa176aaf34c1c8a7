#include <iostream>

#include "sparsenet/cli.hpp"

int main(int argc, char** argv) { return sparsenet::run_cli(argc, argv, std::cout, std::cerr); }

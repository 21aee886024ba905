#include <iostream>

#include "ternpack_cli.hpp"

int main(int argc, char** argv) { return ternpack::cli::run_cli(argc, argv, std::cout, std::cerr); }

#include "featrank/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return featrank::run_cli(argc, argv, std::cout, std::cerr); }

#include <iostream>

#include "dinf/harness/cli.hpp"

int main(int argc, char** argv) { return dinf::harness::cli_main(argc, argv, std::cout, std::cerr); }

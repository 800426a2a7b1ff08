#include "netdissect/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return netdissect::cli::run(argc, argv, std::cout, std::cerr); }

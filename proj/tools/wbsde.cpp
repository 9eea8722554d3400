#include <iostream>

#include "wbsde/cli.hpp"

int main(int argc, char** argv) { return wbsde::run_cli(argc, argv, std::cout, std::cerr); }

#include <iostream>

#include "gilt/cli.hpp"

int main(int argc, char** argv) { return gilt::run_cli(argc, argv, std::cout, std::cerr); }

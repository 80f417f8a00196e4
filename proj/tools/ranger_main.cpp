#include <iostream>

#include "ranger/cli.hpp"

int main(int argc, char** argv) { return ranger::run_cli(argc, argv, std::cout, std::cerr); }

#include <iostream>

#include "flysnn/cli.hpp"

int main(int argc, char** argv) { return flysnn::run_cli(argc, argv, std::cout, std::cerr); }

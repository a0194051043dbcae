#include <iostream>

#include "xmad/cli.hpp"

int main(int argc, char** argv) { return xmad::cli::run(argc, argv, std::cout, std::cerr); }

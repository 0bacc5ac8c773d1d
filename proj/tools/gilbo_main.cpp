#include <iostream>

#include "gilbo/cli.hpp"

int main(int argc, char** argv) { return gilbo::run_cli(argc, argv, std::cout, std::cerr); }

#include <iostream>

#include "vector/cli.h"

int main(int argc, char** argv) { return vec::RunCli(argc, argv, std::cout, std::cerr); }

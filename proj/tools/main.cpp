#include "foleygen/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return foleygen::run(argc, argv, std::cout, std::cerr); }

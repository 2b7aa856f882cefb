#include <iostream>

#include "dephase/cli.hpp"

int main(int argc, char** argv) { return dephase::run_cli(argc, argv, std::cout, std::cerr); }

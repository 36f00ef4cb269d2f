#include <iostream>

#include "rfer/run.hpp"

int main(int argc, char** argv) { return rfer::run_cli(argc, argv, std::cout, std::cerr); }

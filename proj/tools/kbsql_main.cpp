#include <iostream>

#include "kbsql/cli.hpp"

int main(int argc, char** argv) { return kbsql::run_cli(argc, argv, std::cout, std::cerr); }

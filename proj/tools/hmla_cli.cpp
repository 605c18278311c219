#include <iostream>

#include "hmla/app/cli.hpp"

extern char** environ;

int main(int argc, char** argv) { return hmla::app::run_cli(argc, argv, environ, std::cout, std::cerr); }

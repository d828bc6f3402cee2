#include "dtld/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dtld::run_cli(args, std::cout, std::cerr);
}

#include <iostream>
#include <string>
#include <vector>

#include "nnkg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return nnkg::run_cli(args, std::cout, std::cerr);
}

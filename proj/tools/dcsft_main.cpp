#include <iostream>
#include <string>
#include <vector>

#include "dcsft/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dcsft::run_cli(args, std::cout, std::cerr);
}

#include <iostream>
#include <string>
#include <vector>

#include "connector/runner.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return connector::run_command(args, std::cout, std::cerr);
}

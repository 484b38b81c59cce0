#include <iostream>
#include <string>
#include <vector>

#include "collapse_lab/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return collapse_lab::cli::run(args, std::cout, std::cerr);
}

#include <iostream>

#include "latree/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return latree::cli::run(args, std::cout, std::cerr);
}

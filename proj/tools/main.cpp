#include <iostream>
#include <string>
#include <vector>

#include "acnn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return acnn::dispatch(args, std::cout, std::cerr);
}

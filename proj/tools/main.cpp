#include <iostream>

#include "dxlm/cli/cli.hpp"

int main(int argc, char** argv) {
  return dxlm::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}

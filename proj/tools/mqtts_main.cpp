#include <iostream>

#include "mqtts/cli.hpp"

int main(int argc, char** argv) {
  return mqtts::run_cli(argc, argv, std::cout, std::cerr);
}

#include <iostream>

#include "mixclip/cli.hpp"

int main(int argc, char** argv) {
  return mixclip::cli::run(argc, argv, std::cout, std::cerr);
}

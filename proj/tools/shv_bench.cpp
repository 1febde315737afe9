#include "shv/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return shv::cli::bench_main(shv::cli::Args(argv + 1, argv + argc), std::cout, std::cerr);
}

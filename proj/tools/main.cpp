#include <malloc.h>

#include <iostream>
#include <string>
#include <vector>

#include "blindkernel/cli.hpp"

int main(int argc, char** argv) {
  // The training loop allocates many half-megabyte temporaries; keep them on
  // the heap instead of mapping and unmapping pages every step.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  std::vector<std::string> args(argv + 1, argv + argc);
  return blindkernel::run_cli(args, std::cout, std::cerr);
}

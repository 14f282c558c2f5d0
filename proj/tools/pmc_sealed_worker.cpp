#include <cstdio>

#include "pmc/error.hpp"
#include "pmc/pipeline/sealed_executor.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: pmc_sealed_worker <generator.pmcc>\n");
    return 2;
  }
  return pmc::pipeline::run_sealed_worker(0, 1, argv[1]);
}

#include <string>
#include <vector>

#include "tgcn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tgcn::cli::run(args);
}

#include <string>
#include <vector>

#include "corrnet/harness.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return corrnet::cli_dispatch(args);
}

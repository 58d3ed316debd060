#include <string>
#include <vector>

#include "reliab_cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return reliab::cli::run_cli(args);
}

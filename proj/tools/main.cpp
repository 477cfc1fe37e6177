#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) {
  return thlm::cli::cli_run(std::vector<std::string>(argv, argv + argc));
}

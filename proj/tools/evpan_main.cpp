#include <string>
#include <vector>

#include "evpan/commands.hpp"

int main(int argc, char** argv) {
  return evpan::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}

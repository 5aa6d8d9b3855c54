#include <curvemrf/cli.hpp>

int main(int argc, char** argv) {
  return curvemrf::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}

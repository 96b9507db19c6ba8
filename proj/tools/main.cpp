#include <vector>
#include <string>

#include "zeroscm/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return zeroscm::run_cli(args);
}

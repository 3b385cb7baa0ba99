#include <iostream>
#include <string>
#include <vector>

#include "uatest/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return uatest::run(args, std::cout, std::cerr);
}

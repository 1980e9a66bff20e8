#include <iostream>

#include "promptloop/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return promptloop::cli::run_cli(args, std::cout, std::cerr);
}

#include <iostream>
#include <string>
#include <vector>

#include "warptile/cli.h"

int main(int argc, char **argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return warptile::run_cli(args, std::cout, std::cerr);
}

#include <iostream>

#include "engage/cli.hpp"

int main(int argc, char** argv) {
    return engage::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

#include <iostream>

#include "slopestrike/cli.hpp"

int main(int argc, char** argv) {
    return slopestrike::cli::run(argc, argv, std::cout, std::cerr);
}

#include <iostream>
#include <string>
#include <vector>

#include "kalign/cli.hpp"

int main(int argc, char** argv) {
    return kalign::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

#include <string>
#include <vector>

#include "ctxgen/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return ctxgen::cli::run(args);
}

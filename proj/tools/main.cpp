#include <string>
#include <vector>

#include "objbridge/cli.h"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return objbridge::run_command(args);
}

#pragma once

#include <string>
#include <vector>

namespace objbridge {

// Entry point behind the objbridge binary. args excludes the program name.
// Exit codes: 0 ok, 1 usage/config, 2 data, 3 assertion gate, 4 internal.
int run_command(const std::vector<std::string>& args);

}  // namespace objbridge

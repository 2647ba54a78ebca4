#pragma once

#include <string>
#include <vector>

namespace milkit::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace milkit::cli

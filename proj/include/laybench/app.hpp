#pragma once

#include <string>
#include <vector>

namespace laybench::app {

// Exit codes: 0 success, 1 some documents/items failed, 2 configuration or
// input error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitConfig = 2;

int run(int argc, char** argv);
int run(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace laybench::app

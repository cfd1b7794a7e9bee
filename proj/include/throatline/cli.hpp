#pragma once

#include <string>
#include <vector>

namespace throatline {

// Exit codes: 0 success, 1 usage error, 2 runtime error.
int cli_dispatch(int argc, const char* const* argv);
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace throatline

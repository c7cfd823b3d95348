#pragma once

#include <iosfwd>

namespace foleygen {

// Exit codes: 0 success, 1 usage, 2 configuration, 3 runtime failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace foleygen

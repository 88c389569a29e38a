#pragma once

#include <iosfwd>

namespace vec {

// `vector` command line. Exit codes: 0 ok, 1 usage, 2 data error,
// 3 numerical failure.
int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vec

#pragma once

namespace gage::cli {

// Dispatches gen-data / train / eval / attend / sweep.
// Exit codes: 0 success, 1 usage error, 2 runtime error.
int run(int argc, const char* const* argv);

}  // namespace gage::cli

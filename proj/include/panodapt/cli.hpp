#pragma once

namespace panodapt::cli {

// 0 success, 2 bad input (validation or usage), 1 internal failure
int run(int argc, const char* const* argv);

}  // namespace panodapt::cli

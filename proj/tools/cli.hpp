#pragma once

namespace semuq::cli {

// Parses argv, runs one subcommand, returns the process exit code
// (0 ok, 1 partial failure or runtime error, 2 invalid config / usage).
int run(int argc, const char* const* argv);

}  // namespace semuq::cli

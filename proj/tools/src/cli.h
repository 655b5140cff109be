#pragma once

namespace fpgs::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kUsage = 2,       // bad or missing flags
  kParse = 3,       // unreadable or malformed input files
  kValidation = 4,  // inputs parse but violate a precondition
  kRuntime = 5,     // anything else
};

/// Entry point of the fpgs tool; returns the process exit code.
int run(int argc, const char* const* argv);

}  // namespace fpgs::cli

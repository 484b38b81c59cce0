#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace collapse_lab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

inline constexpr const char* kVersion = "1.0.0";

/// Runs one command line (args excludes the program name). Primary results
/// go to `out` or the files named by the command's flags; diagnostics and
/// error objects go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace collapse_lab::cli

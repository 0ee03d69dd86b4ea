#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace convo::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Runs one command line (without the program name). Returns 0 on success,
/// 2 on usage errors and 1 on runtime errors; runtime errors are reported to
/// `err` as a JSON object `{"error": ..., "code": ...}`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace convo::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vircov::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitPreprocessing = 3;
inline constexpr int kExitInference = 4;

/// Runs one command line (without the program name). Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

}  // namespace vircov::cli

#pragma once

// The dex command line as a library so tests can drive it in-process.
// Exit codes: 0 success, 1 domain rejection, 2 usage or input error.

#include "dex/geometry.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace dex::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRejected = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kVersion = "0.1.0";

class UsageError : public Error {
 public:
  using Error::Error;
};

/// A well-formed request the domain refuses (all sessions filtered, empty metrics).
class DomainRejected : public Error {
 public:
  using Error::Error;
};

/// args excludes the program name, e.g. {"simulate", "--trials", "5", ...}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dex::cli

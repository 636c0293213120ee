#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace cmcr {
namespace detail {

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// Non-fatal diagnostics go to stderr so machine-readable outputs stay clean.
inline void warn(const std::string& msg) {
  std::fprintf(stderr, "[cmcr] warning: %s\n", msg.c_str());
}

}  // namespace detail
}  // namespace cmcr

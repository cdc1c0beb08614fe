#pragma once

#include <cstdio>
#include <string>

namespace metaopt {

// Shortest round-trip-exact decimal form; %.17g keeps every bit of a double.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace metaopt

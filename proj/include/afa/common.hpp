#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace afa {

// Base error type. Subclasses map onto CLI exit codes:
// usage_error -> 1, data_error -> 2, numeric_error -> 3.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct usage_error : error {
  using error::error;
};

struct data_error : error {
  using error::error;
};

struct numeric_error : error {
  using error::error;
};

inline std::string strf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  va_end(args);
  return out;
}

inline bool host_is_little_endian() {
  const unsigned one = 1;
  return *reinterpret_cast<const unsigned char*>(&one) == 1;
}

}  // namespace afa

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace panodapt {

// Raised for bad user input (files, configs, CLI values). The CLI maps this
// to exit code 2; everything else that escapes is an internal error (exit 1).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

constexpr std::uint8_t kIgnoreLabel = 255;

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

}  // namespace panodapt

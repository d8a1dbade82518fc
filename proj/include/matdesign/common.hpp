#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace matdesign {

// Error families map onto CLI exit codes (see tools/matdesign.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

using WarningSink = std::function<void(std::string_view)>;

/// Replaces the process-wide warning sink; returns the previous one.
/// The default sink writes "warning: ..." lines to stderr.
WarningSink set_warning_sink(WarningSink sink);
void warn(std::string_view message);

/// 64-bit FNV-1a, used for config/prompt/state fingerprints.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace matdesign

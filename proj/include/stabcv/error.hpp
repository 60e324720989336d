#pragma once

#include <stdexcept>
#include <string>

namespace stabcv {

enum class ErrorCode {
  invalid_argument,  // bad configuration or out-of-range parameter
  data,              // unreadable or malformed data
  numerical,         // solver breakdown, non-finite results
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_invalid(const std::string& what) {
  throw Error(ErrorCode::invalid_argument, what);
}
[[noreturn]] inline void throw_data(const std::string& what) { throw Error(ErrorCode::data, what); }
[[noreturn]] inline void throw_numerical(const std::string& what) {
  throw Error(ErrorCode::numerical, what);
}

}  // namespace stabcv

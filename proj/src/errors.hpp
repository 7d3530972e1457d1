#pragma once

#include <stdexcept>
#include <string>

namespace mvs {

enum class ErrorKind {
  InvalidArgument,  // bad inputs, malformed data, violated preconditions
  Fit,              // estimation failed (collinearity, singular covariance, ...)
  Io,               // file read/write problems
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_invalid(const std::string& msg) {
  throw Error(ErrorKind::InvalidArgument, msg);
}
[[noreturn]] inline void fail_fit(const std::string& msg) {
  throw Error(ErrorKind::Fit, msg);
}
[[noreturn]] inline void fail_io(const std::string& msg) {
  throw Error(ErrorKind::Io, msg);
}

}  // namespace mvs

#pragma once

#include <stdexcept>
#include <string>

namespace fractex {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind {
  usage,         // bad arguments, out-of-range parameters
  data,          // malformed input, violated preconditions on data
  numeric,       // singular / degenerate linear algebra
  io,            // filesystem and sink failures
  verification,  // an invariant suite failed
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace fractex

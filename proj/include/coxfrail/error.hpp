#pragma once

#include <stdexcept>
#include <string>

namespace coxfrail {

enum class ErrorKind {
  InvalidInput,   // malformed data, bad configuration, dimension mismatch
  Numerical,      // non-finite values, failed decompositions, unstable truncation
  Diverged,       // parameter iterates left the admissible region
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_input(const std::string& what) {
  throw Error(ErrorKind::InvalidInput, what);
}

[[noreturn]] inline void throw_numerical(const std::string& what) {
  throw Error(ErrorKind::Numerical, what);
}

}  // namespace coxfrail

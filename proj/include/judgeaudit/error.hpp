#pragma once

#include <stdexcept>
#include <string>

namespace judgeaudit {

// Maps onto the CLI exit codes: Input -> 2, Numeric -> 3, Network -> 4.
enum class ErrorKind { Input, Numeric, Network };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::Input, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class NetworkError : public Error {
 public:
  explicit NetworkError(const std::string& what, bool retryable = false)
      : Error(ErrorKind::Network, what), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

}  // namespace judgeaudit

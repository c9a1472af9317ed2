#pragma once

#include <stdexcept>
#include <string>

namespace vnd {

// Base of every exception thrown by the library. The category string is
// stable and is what the command-line tool prints in its error line.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain", what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class NumericalUnderflow : public Error {
 public:
  explicit NumericalUnderflow(const std::string& what)
      : Error("numerical-underflow", what) {}
};

}  // namespace vnd

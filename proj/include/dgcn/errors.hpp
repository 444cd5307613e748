#pragma once

#include <stdexcept>
#include <string>

namespace dgcn {

/// Base for every error raised by the library. `kind()` is the stable tag
/// printed on the machine-parsable CLI error line.
class Error : public std::runtime_error {
  public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

  private:
    std::string kind_;
};

class DimensionError : public Error {
  public:
    explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class ValidationError : public Error {
  public:
    explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

class StateError : public Error {
  public:
    explicit StateError(const std::string& what) : Error("state", what) {}
};

class NumericError : public Error {
  public:
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class ParseError : public Error {
  public:
    explicit ParseError(const std::string& what) : Error("parse", what) {}
};

class IoError : public Error {
  public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace dgcn

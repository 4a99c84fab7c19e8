#pragma once

#include <stdexcept>
#include <string>

namespace fds {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidGrid : Error {
  using Error::Error;
};
struct BudgetExceeded : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};

struct ParseError : Error {
  int column;
  ParseError(const std::string& msg, int col)
      : Error(msg + " (column " + std::to_string(col) + ")"), column(col) {}
};
struct UnboundVariable : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};

struct UnsupportedDimension : Error {
  using Error::Error;
};
struct MissingReference : Error {
  using Error::Error;
};

struct NonFinite : Error {
  using Error::Error;
};
struct NonContractive : Error {
  using Error::Error;
};
struct MaxIterExceeded : Error {
  using Error::Error;
};

struct ScopeViolation : Error {
  using Error::Error;
};
struct GridOutOfRange : Error {
  using Error::Error;
};
struct PartitionExhausted : Error {
  using Error::Error;
};
struct SubintervalNonContractive : Error {
  int interval;
  SubintervalNonContractive(const std::string& msg, int i)
      : Error(msg), interval(i) {}
};

struct ValidationError : Error {
  using Error::Error;
};

}  // namespace fds

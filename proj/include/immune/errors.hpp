#pragma once

#include <stdexcept>
#include <string>

namespace immune {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Prompt id not present in a policy/reward table and no fallback configured.
class UnknownPromptError : public Error {
 public:
  using Error::Error;
};

// A stored probability row violates non-negativity or normalization.
class MalformedRowError : public Error {
 public:
  using Error::Error;
};

// Exact enumeration would exceed the configured trajectory cap.
class EnumerationTooLargeError : public Error {
 public:
  using Error::Error;
};

// Two distributions were compared over incompatible supports, or absolute
// continuity (q = 0 while p > 0) is violated.
class SupportMismatchError : public Error {
 public:
  using Error::Error;
};

// Tabular reward lookup missed and no default value is declared.
class MissingRewardEntryError : public Error {
 public:
  using Error::Error;
};

// A decoding candidate has zero base probability.
class ZeroBaseMassError : public Error {
 public:
  using Error::Error;
};

// The attack target prefix has probability zero under every candidate suffix.
class TargetUnreachableError : public Error {
 public:
  using Error::Error;
};

// Scenario file is not syntactically valid JSON.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Scenario file parsed but violates a structural invariant. The message
// names the offending field.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace immune

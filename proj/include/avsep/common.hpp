#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace avsep {

#ifdef AVSEP_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

// Precondition violation on caller-supplied data.
class InvalidInput : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class ShapeMismatch : public InvalidInput {
public:
  using InvalidInput::InvalidInput;
};

// A NaN or Inf showed up in a named layer or sample.
class NonFinite : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Corrupt or truncated file, or wrong format version.
class IntegrityError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class VersionMismatch : public IntegrityError {
public:
  using IntegrityError::IntegrityError;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInput(what);
}

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

}  // namespace avsep

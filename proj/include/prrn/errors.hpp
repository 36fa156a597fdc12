#pragma once

#include <stdexcept>
#include <string>

namespace prrn {

/// Base class for every error thrown by this library.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

/// Matrix dimensions disagree with what an operation requires.
class shape_error : public error {
 public:
  using error::error;
};

/// Numerical degeneracy: rank deficiency, vanishing norms, coincident
/// singular values, non-convergent factorizations.
class numeric_error : public error {
 public:
  using error::error;
};

/// Malformed or mutually inconsistent input data (files, formats,
/// incompatible point counts).
class data_error : public error {
 public:
  using error::error;
};

/// Two frames share fewer visible points than an operation needs.
class overlap_error : public error {
 public:
  using error::error;
};

}  // namespace prrn

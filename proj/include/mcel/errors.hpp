#pragma once

#include <stdexcept>
#include <string>

namespace mcel {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a documented precondition (bad index, non-scalar root, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Quantization code outside the code set of its scheme.
class EncodingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed IDX or model file. `kind()` tells the failure modes apart.
class FormatError : public IoError {
 public:
  enum class Kind {
    bad_magic,
    truncated,
    count_mismatch,
    version_mismatch,
    corrupt_length,
    checksum,
  };

  FormatError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace mcel

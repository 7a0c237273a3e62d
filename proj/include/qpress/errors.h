#ifndef QPRESS_ERRORS_H_
#define QPRESS_ERRORS_H_

#include <stdexcept>
#include <string>

namespace qpress {

// Base of every error the library throws. kind() is a stable, single-word
// class name that the CLI prints so scripts can branch on it.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

// Tensor/sequence dimensions do not fit the operation.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

// Caller-supplied data violates a precondition (e.g. image too small).
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error("input", what) {}
};

// Entropy coding failures: out-of-support symbols, truncated or corrupt
// payloads.
class CodingError : public Error {
 public:
  explicit CodingError(const std::string& what) : Error("coding", what) {}
};

// Malformed container (bitstream, checkpoint, weight file).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

// Bitstream was produced by a different model.
class DigestMismatchError : public Error {
 public:
  explicit DigestMismatchError(const std::string& what)
      : Error("digest", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

// Non-finite values during training.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

}  // namespace qpress

#endif  // QPRESS_ERRORS_H_

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfqe {

// Every error raised by the library derives from Error. The message is
// prefixed with "<module>.<operation>: " so callers can tell where it came from.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public Error {
 public:
  TruncationError(const std::string& what, std::size_t frame_index)
      : Error(what), frame_index_(frame_index) {}
  std::size_t frame_index() const noexcept { return frame_index_; }

 private:
  std::size_t frame_index_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Raised when a statistical fit has no usable spread (zero variance, one-sided data).
class DegenerateInputError : public Error {
 public:
  DegenerateInputError(const std::string& what, int feature_index = -1)
      : Error(what), feature_index_(feature_index) {}
  int feature_index() const noexcept { return feature_index_; }

 private:
  int feature_index_;
};

// Non-finite losses, solver blow-ups.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& what, std::size_t bytes_written = 0)
      : Error(what), bytes_written_(bytes_written) {}
  std::size_t bytes_written() const noexcept { return bytes_written_; }

 private:
  std::size_t bytes_written_;
};

}  // namespace mfqe

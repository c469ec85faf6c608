#ifndef LQIQ_ERRORS_HPP_
#define LQIQ_ERRORS_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lqiq {

// Shapes that cannot be combined by the requested operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scalar argument outside its documented domain (dropout rate, tau, std...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke a precondition that is not about shapes or values
// (non-scalar backward, missing gradient, architecture mismatch).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed input file. `offset()` is the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// The file ended before the payload its header promises.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lqiq

#endif  // LQIQ_ERRORS_HPP_

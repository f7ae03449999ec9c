#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ecgan {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Class label outside [0, K).
class InvalidLabelError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (non-scalar loss, missing gradient, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NetworkSpec or dataset parameters that cannot be built.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data. Carries the byte offset where parsing stopped
/// (or -1 when the problem is not tied to a position).
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::int64_t offset = -1)
      : Error(offset >= 0 ? what + " (at byte offset " + std::to_string(offset) + ")" : what),
        offset_(offset) {}
  std::int64_t offset() const noexcept { return offset_; }

 private:
  std::int64_t offset_;
};

/// IDX image and label files disagree on the number of items.
class CountMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Stratified subsampling would leave a class with zero samples.
class UnderflowError : public Error {
 public:
  using Error::Error;
};

/// A loss became NaN or infinite during training.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, std::int64_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

/// Bad experiment configuration (unknown key, wrong type, invalid value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ecgan

#pragma once

#include <stdexcept>
#include <string>

namespace coltran {

/// Tensor extents that do not fit an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A symbol index outside its table (gray level, color index, class target).
class VocabularyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Image extents that are not compatible with a configured resolution.
class ResolutionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of an API contract, e.g. calling backward() on a non-scalar.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace coltran

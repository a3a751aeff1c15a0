#pragma once

#include <stdexcept>
#include <string>

namespace samic {

// Bad caller input (empty prompt lists, out-of-bounds points, unknown ids).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor or image shapes that do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration (even kernel extents, all loss terms disabled, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerically degenerate input: zero variance, no fixations, too few distinct vectors.
class DegenerateError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A requested segmenter or embedding producer cannot be reached or loaded.
class BackendUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Retriable: the resource exists but is not ready yet (embedding still computing).
class NotReady : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by the trainer when the loss becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace samic

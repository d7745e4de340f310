#pragma once

#include <stdexcept>
#include <string>

namespace ninformer {

// Incompatible tensor shapes. The message names the offending shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A model, training or data configuration violates one of its invariants.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed dataset or checkpoint bytes.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf detected where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: non-scalar loss, label out of range, mismatched optimizer state.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace ninformer

#pragma once

#include <stdexcept>
#include <string>

namespace vqd {

// Shape/dimension mismatches. Messages always name both shapes.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Out-of-range ids (embedding lookups, axis selectors). Names the offending id.
class IndexError : public std::out_of_range {
 public:
  explicit IndexError(const std::string& msg) : std::out_of_range(msg) {}
};

// API misuse: non-scalar backward, empty sequences, missing modalities.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Malformed record files, manifest mismatches, bad checkpoints.
class SchemaError : public std::runtime_error {
 public:
  explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run configuration (missing paths, dim conflicts, bad flags).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged (NaN/inf loss).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vqd

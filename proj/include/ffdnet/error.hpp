#pragma once

#include <stdexcept>
#include <string>

namespace ffdnet {

// Caller broke a documented precondition (shape, range, ordering).
class ContractViolation : public std::logic_error {
public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// Unreadable, missing or unsupported input data. The message names the file.
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure while training (NaN/Inf in activations or gradients).
class TrainingError : public std::runtime_error {
public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace ffdnet

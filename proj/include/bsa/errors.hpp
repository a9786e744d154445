#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bsa {

// Raised when a computation cannot produce a trustworthy number: a diverging
// iterate, a singular system, a chain that does not mix. Invalid arguments are
// reported with std::invalid_argument instead.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonErgodicKernel : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class NonUniqueStationary : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class NonFiniteIterate : public NumericalFailure {
 public:
  explicit NonFiniteIterate(std::size_t index)
      : NumericalFailure("non-finite iterate at index " + std::to_string(index)),
        index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

}  // namespace bsa

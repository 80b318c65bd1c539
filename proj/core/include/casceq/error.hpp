#pragma once

#include <stdexcept>
#include <string>

namespace casceq {

// Bad or inconsistent input: missing files, malformed records, shape
// mismatches. The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computation could not produce a finite, well-defined answer
// (singular systems, divergence, exhausted resampling budget). Exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace casceq

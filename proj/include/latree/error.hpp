#pragma once

#include <stdexcept>
#include <string>

namespace latree {

// Malformed input: invalid configs, bad files, unknown names.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A solver or search failed to produce a usable answer.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace latree

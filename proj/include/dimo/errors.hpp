#pragma once

#include <stdexcept>

namespace dimo {

/// Bad or inconsistent input data (malformed files, unknown ids, degenerate corpora).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dimo

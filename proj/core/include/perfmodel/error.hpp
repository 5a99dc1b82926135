#pragma once

#include <stdexcept>
#include <string>

namespace perfmodel {

/// Every recoverable failure (parsing, validation, prediction) throws Error.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace perfmodel

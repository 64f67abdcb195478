#pragma once

#include <stdexcept>
#include <string>

namespace xlc {

// Base for all toolkit failures. The CLI maps these to exit code 1 unless a
// subclass says otherwise.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable or unwritable files, bad flags. Exit code 2.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace xlc
